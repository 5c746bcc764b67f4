// Copyright 2026 The acfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "acfg/guidance.hpp"
#include "acfg/rng.hpp"

namespace acfg
{
enum class DecodeMode
{
    none,
    static_cfg,
    acfg,
};

struct SamplerConfig
{
    enum class Kind
    {
        greedy,
        temperature,
    };

    Kind kind = Kind::greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

struct DecodeConfig
{
    std::size_t gen_len = 8;
    std::size_t steps = 8;
    GuidanceConfig guidance;
    DecodeMode mode = DecodeMode::acfg;
    SamplerConfig sampler;
    /// Upper bound on steps / gen_len.
    std::size_t max_steps_per_token = 4;

    void validate() const
    {
        if (gen_len < 1) throw InvalidConfig("gen_len must be >= 1");
        if (steps < 1) throw InvalidConfig("steps must be >= 1");
        if (steps > gen_len * max_steps_per_token)
            throw InvalidConfig("steps exceeds gen_len * " + std::to_string(max_steps_per_token));
        if (sampler.kind == SamplerConfig::Kind::temperature &&
            !(sampler.temperature > 0.0 && std::isfinite(sampler.temperature)))
            throw InvalidConfig("sampling temperature must be > 0");
        guidance.validate();
    }
};

struct MaskSchedule
{
    std::size_t total_steps = 0;
    std::vector<std::size_t> reveal_counts;
};

/// Spreads gen_len reveals over `steps` steps; earlier steps take the remainder.
inline MaskSchedule make_schedule(std::size_t gen_len, std::size_t steps)
{
    if (gen_len < 1 || steps < 1) throw InvalidConfig("make_schedule: gen_len and steps must be >= 1");
    MaskSchedule s;
    s.total_steps = steps;
    s.reveal_counts.assign(steps, gen_len / steps);
    for (std::size_t k = 0; k < gen_len % steps; ++k) ++s.reveal_counts[k];
    return s;
}

struct SampledToken
{
    TokenId token = 0;
    float confidence = 0.0f;
};

/**
 * Draws a token from a probability row. Greedy takes the argmax (lowest id
 * on ties); temperature sampling draws from dist^(1/t) using one uniform
 * derived from (seed, counter), so draws do not depend on call order. The
 * returned confidence is the untempered probability of the chosen token.
 */
inline SampledToken sample_token(std::span<const float> dist, const SamplerConfig& sampler, std::uint64_t counter)
{
    if (dist.empty()) throw InvalidInput("sample_token: empty distribution");
    for (float p : dist)
        if (!std::isfinite(p) || p < 0.0f) throw InvalidInput("sample_token: invalid probability");

    std::size_t pick = 0;
    if (sampler.kind == SamplerConfig::Kind::greedy)
    {
        for (std::size_t v = 1; v < dist.size(); ++v)
            if (dist[v] > dist[pick]) pick = v;
    }
    else
    {
        std::vector<double> weights(dist.size(), 0.0);
        double top = -INFINITY;
        for (std::size_t v = 0; v < dist.size(); ++v)
            if (dist[v] > 0.0f) top = std::max(top, std::log(static_cast<double>(dist[v])) / sampler.temperature);
        if (!std::isfinite(top)) throw InvalidInput("sample_token: distribution has no mass");
        double total = 0.0;
        for (std::size_t v = 0; v < dist.size(); ++v)
        {
            if (dist[v] > 0.0f)
                weights[v] = std::exp(std::log(static_cast<double>(dist[v])) / sampler.temperature - top);
            total += weights[v];
        }
        const double target = rng::to_unit(rng::mix(sampler.seed, counter)) * total;
        double acc = 0.0;
        pick = dist.size();
        for (std::size_t v = 0; v < dist.size(); ++v)
        {
            if (weights[v] == 0.0) continue;
            acc += weights[v];
            pick = v;
            if (target < acc) break;
        }
    }
    return {static_cast<TokenId>(pick), dist[pick]};
}

struct Candidate
{
    std::size_t position = 0;
    TokenId token = 0;
    float confidence = 0.0f;

    bool operator==(const Candidate&) const = default;
};

/// What happened during one decode step.
struct StepTrace
{
    std::size_t step = 0;
    /// One entry per generated position that was [MASK] when the step began.
    std::vector<Candidate> candidates;
    /// Positions A-CFG masked in the unconditional input (empty for other modes).
    std::vector<std::size_t> acfg_remasked;
    /// Positions committed by this step, ascending.
    std::vector<std::size_t> revealed;

    bool operator==(const StepTrace&) const = default;
};

struct DecodeResult
{
    TokenSeq final;
    std::vector<StepTrace> traces;
    /// Indexed by generated offset (position - prompt_len).
    std::vector<std::size_t> commit_step;

    bool operator==(const DecodeResult&) const = default;
};

/// A decode that failed part-way; carries everything produced before the failure.
class DecodeError : public Error
{
public:
    DecodeError(const std::string& what, std::vector<StepTrace> traces, TokenSeq partial)
        : Error(what), traces_(std::move(traces)), partial_(std::move(partial))
    {
    }

    const std::vector<StepTrace>& traces() const { return traces_; }
    const TokenSeq& partial() const { return partial_; }

private:
    std::vector<StepTrace> traces_;
    TokenSeq partial_;
};

namespace detail
{
/// Softmax over one logit row with the [MASK] column forced to zero mass.
inline std::vector<float> candidate_distribution(std::span<const float> logits, TokenId mask_id)
{
    const auto mask = static_cast<std::size_t>(mask_id);
    double top = -INFINITY;
    for (std::size_t v = 0; v < logits.size(); ++v)
        if (v != mask) top = std::max(top, static_cast<double>(logits[v]));
    std::vector<double> e(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v)
    {
        if (v == mask) continue;
        e[v] = std::exp(static_cast<double>(logits[v]) - top);
        total += e[v];
    }
    std::vector<float> out(logits.size());
    for (std::size_t v = 0; v < logits.size(); ++v) out[v] = static_cast<float>(e[v] / total);
    return out;
}

template <LogitModel M>
GuidanceStepResult guided_logits(M& model, const TokenSeq& seq, const DecodeConfig& cfg)
{
    switch (cfg.mode)
    {
    case DecodeMode::acfg: return acfg_step(model, seq, cfg.guidance);
    case DecodeMode::static_cfg: return static_cfg_step(model, seq, cfg.guidance.w);
    case DecodeMode::none: break;
    }
    GuidanceStepResult r;
    r.cond = call_model(model, seq);
    r.guided = r.cond;
    r.model_calls = 1;
    return r;
}
}  // namespace detail

/**
 * Runs the iterative unmasking loop from prompt ++ [MASK] * gen_len.
 *
 * Each step obtains guided logits for the current sequence, proposes a token
 * for every still-masked generated position, and commits the reveal_counts[k]
 * proposals with the highest probability under the guided distribution (lower
 * position wins ties). The rest stay masked for later steps. Committed tokens
 * are never revisited.
 */
template <LogitModel M>
DecodeResult decode(M& model, const TokenSeq& prompt, const DecodeConfig& cfg)
{
    cfg.validate();
    const Vocab& vocab = model.vocab();
    prompt.validate(vocab);
    if (prompt.count(vocab.mask_id) != 0) throw InvalidInput("decode: prompt contains [MASK]");
    if (vocab.size < 2) throw InvalidConfig("decode: vocabulary has no token besides [MASK]");

    const auto schedule = make_schedule(cfg.gen_len, cfg.steps);
    const std::size_t prompt_len = prompt.size();

    DecodeResult result;
    result.final.ids = prompt.ids;
    result.final.ids.resize(prompt_len + cfg.gen_len, vocab.mask_id);
    result.final.prompt_len = prompt_len;
    result.commit_step.assign(cfg.gen_len, 0);
    TokenSeq& seq = result.final;

    for (std::size_t k = 0; k < schedule.total_steps; ++k)
    {
        GuidanceStepResult step;
        try
        {
            step = detail::guided_logits(model, seq, cfg);
        }
        catch (const std::exception& e)
        {
            throw DecodeError("decode aborted at step " + std::to_string(k) + ": " + e.what(),
                              std::move(result.traces), seq);
        }

        StepTrace trace;
        trace.step = k;
        if (cfg.mode == DecodeMode::acfg) trace.acfg_remasked = step.remasked;
        for (std::size_t j = prompt_len; j < seq.size(); ++j)
        {
            if (seq.ids[j] != vocab.mask_id) continue;
            const auto dist = detail::candidate_distribution(step.guided.row(j), vocab.mask_id);
            const auto s = sample_token(dist, cfg.sampler, rng::mix(k, j));
            trace.candidates.push_back({j, s.token, s.confidence});
        }

        std::vector<Candidate> order = trace.candidates;
        std::stable_sort(order.begin(), order.end(),
                         [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });
        const std::size_t n_reveal = std::min(schedule.reveal_counts[k], order.size());
        for (std::size_t i = 0; i < n_reveal; ++i)
        {
            seq.ids[order[i].position] = order[i].token;
            result.commit_step[order[i].position - prompt_len] = k;
            trace.revealed.push_back(order[i].position);
        }
        std::sort(trace.revealed.begin(), trace.revealed.end());
        result.traces.push_back(std::move(trace));
    }
    return result;
}

inline std::string_view to_string(DecodeMode m)
{
    switch (m)
    {
    case DecodeMode::none: return "none";
    case DecodeMode::static_cfg: return "static_cfg";
    case DecodeMode::acfg: return "acfg";
    }
    return "?";
}

}  // namespace acfg
