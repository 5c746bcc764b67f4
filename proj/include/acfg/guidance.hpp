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
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acfg/model.hpp"
#include "acfg/types.hpp"

/**
 * @file guidance.hpp
 * One guided prediction step for a masked diffusion language model.
 *
 * Classifier-free guidance extrapolates from an unconditional prediction
 * towards the conditional one:
 *
 *     guided = uncond + (w + 1) * (cond - uncond)
 *
 * Standard CFG builds the unconditional input by masking every token.
 * Adaptive CFG instead masks only the ceil(rho * n) currently visible tokens
 * the conditional model is least confident about, so the guidance signal is
 * concentrated where the model is uncertain.
 */

namespace acfg
{
enum class ConfidenceMetric
{
    argmax_prob,         ///< max_v p(v); the default
    current_token_prob,  ///< p(token currently at the position)
    neg_entropy,         ///< sum_v p log p, higher is more confident
};

enum class RemaskScope
{
    all_nonmask,     ///< prompt and generated tokens
    generated_only,  ///< only positions at or after prompt_len
};

struct GuidanceConfig
{
    double w = 0.5;
    double rho = 0.7;
    ConfidenceMetric metric = ConfidenceMetric::argmax_prob;
    RemaskScope scope = RemaskScope::all_nonmask;

    void validate() const
    {
        if (!std::isfinite(w) || w < 0.0) throw InvalidConfig("guidance scale w must be finite and >= 0");
        if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidConfig("re-mask proportion rho must lie in [0, 1]");
    }
};

struct ConfidenceEntry
{
    std::size_t position = 0;
    float score = 0.0f;

    bool operator==(const ConfidenceEntry&) const = default;
};

struct GuidanceStepResult
{
    LogitMatrix guided;
    LogitMatrix cond;
    LogitMatrix uncond;
    TokenSeq uncond_input;               ///< sequence that produced `uncond`
    std::vector<std::size_t> remasked;   ///< ascending positions
    std::vector<ConfidenceEntry> confidences;
    int model_calls = 0;
};

/// Row-wise softmax with max subtraction. Throws InvalidInput on non-finite logits.
inline ProbMatrix softmax_rows(const LogitMatrix& logits)
{
    ProbMatrix probs(logits.rows(), logits.cols());
    std::vector<double> scratch(logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r)
    {
        auto in = logits.row(r);
        double top = -INFINITY;
        for (float v : in)
        {
            if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite logit in row " + std::to_string(r));
            top = std::max(top, static_cast<double>(v));
        }
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c)
        {
            scratch[c] = std::exp(static_cast<double>(in[c]) - top);
            total += scratch[c];
        }
        auto out = probs.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) out[c] = static_cast<float>(scratch[c] / total);
    }
    return probs;
}

/// Indices eligible for re-masking: visible tokens within the configured scope.
inline std::vector<std::size_t> remaskable_positions(const TokenSeq& seq, TokenId mask_id, RemaskScope scope)
{
    std::vector<std::size_t> out;
    const std::size_t first = scope == RemaskScope::generated_only ? seq.prompt_len : 0;
    for (std::size_t j = first; j < seq.size(); ++j)
        if (seq.ids[j] != mask_id) out.push_back(j);
    return out;
}

inline float row_confidence(std::span<const float> p, TokenId current, ConfidenceMetric metric)
{
    switch (metric)
    {
    case ConfidenceMetric::argmax_prob:
        return *std::max_element(p.begin(), p.end());
    case ConfidenceMetric::current_token_prob:
        return p[static_cast<std::size_t>(current)];
    case ConfidenceMetric::neg_entropy:
    {
        double acc = 0.0;
        for (float v : p)
            if (v > 0.0f) acc += static_cast<double>(v) * std::log(static_cast<double>(v));
        return static_cast<float>(acc);
    }
    }
    return 0.0f;
}

/// One confidence entry per remaskable position, in ascending position order.
inline std::vector<ConfidenceEntry> token_confidences(const ProbMatrix& probs, const TokenSeq& seq, TokenId mask_id,
                                                      const GuidanceConfig& cfg)
{
    if (probs.rows() != seq.size()) throw InvalidInput("token_confidences: probability rows do not match sequence");
    for (auto id : seq.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= probs.cols())
            throw InvalidInput("token_confidences: token id outside probability columns");

    std::vector<ConfidenceEntry> out;
    for (auto j : remaskable_positions(seq, mask_id, cfg.scope))
        out.push_back({j, row_confidence(probs.row(j), seq.ids[j], cfg.metric)});
    return out;
}

/// min(ceil(rho * n), n), and 0 when n == 0.
inline std::size_t target_remask_count(double rho, std::size_t n)
{
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidConfig("re-mask proportion rho must lie in [0, 1]");
    if (n == 0) return 0;
    // Absorbs representation error so that e.g. rho = 0.3, n = 10 yields 3, not 4.
    const double scaled = rho * static_cast<double>(n);
    const auto target = static_cast<std::size_t>(std::ceil(scaled - 1e-9 * static_cast<double>(n)));
    return std::min(target, n);
}

/**
 * Positions of the `count` lowest-scoring entries, ties going to the smaller
 * position, reported in ascending position order.
 */
inline std::vector<std::size_t> select_low_confidence(std::span<const ConfidenceEntry> entries, std::size_t count)
{
    if (count > entries.size())
        throw InvalidInput("select_low_confidence: count " + std::to_string(count) + " exceeds " +
                           std::to_string(entries.size()) + " entries");
    std::vector<ConfidenceEntry> sorted(entries.begin(), entries.end());
    std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(count), sorted.end(),
                      [](const ConfidenceEntry& a, const ConfidenceEntry& b) {
                          if (a.score != b.score) return a.score < b.score;
                          return a.position < b.position;
                      });
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sorted[i].position);
    std::sort(out.begin(), out.end());
    return out;
}

/// Copy of `seq` with the given positions replaced by [MASK].
inline TokenSeq build_uncond_input(const TokenSeq& seq, std::span<const std::size_t> remasked, TokenId mask_id)
{
    TokenSeq out = seq;
    for (auto j : remasked)
    {
        if (j >= seq.size()) throw InvalidInput("build_uncond_input: position out of range");
        if (seq.ids[j] == mask_id)
            throw InvalidInput("build_uncond_input: position " + std::to_string(j) + " is already [MASK]");
        out.ids[j] = mask_id;
    }
    return out;
}

/// uncond + (w + 1) * (cond - uncond). At w == 0 this is `cond`, returned verbatim.
inline LogitMatrix apply_cfg(const LogitMatrix& uncond, const LogitMatrix& cond, double w)
{
    if (!uncond.same_shape(cond)) throw InvalidInput("apply_cfg: shape mismatch");
    if (!std::isfinite(w) || w < 0.0) throw InvalidConfig("guidance scale w must be finite and >= 0");
    if (w == 0.0) return cond;

    const float scale = static_cast<float>(w + 1.0);
    LogitMatrix out(cond.rows(), cond.cols());
    auto u = uncond.values();
    auto c = cond.values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + scale * (c[i] - u[i]);
    if (!out.all_finite()) throw InvalidInput("apply_cfg: guided logits overflowed");
    return out;
}

namespace detail
{
template <LogitModel M>
LogitMatrix call_model(M& model, const TokenSeq& seq)
{
    LogitMatrix out = model.logits(seq);
    check_logits(out, seq, model.vocab());
    return out;
}

template <LogitModel M>
GuidanceStepResult guided_from_input(M& model, const TokenSeq& seq, TokenSeq uncond_input, LogitMatrix cond,
                                     double w, GuidanceStepResult result)
{
    if (uncond_input == seq)
    {
        result.uncond = cond;
        result.model_calls = 1;
    }
    else
    {
        result.uncond = call_model(model, uncond_input);
        result.model_calls = 2;
    }
    result.guided = apply_cfg(result.uncond, cond, w);
    result.cond = std::move(cond);
    result.uncond_input = std::move(uncond_input);
    return result;
}
}  // namespace detail

/**
 * Adaptive CFG for one generation step.
 *
 * Scores each visible token by the conditional model's confidence, masks the
 * ceil(rho * n) least confident ones to form the unconditional input, and
 * combines both predictions. When nothing is re-masked the conditional logits
 * double as the unconditional ones and the model is called once.
 */
template <LogitModel M>
GuidanceStepResult acfg_step(M& model, const TokenSeq& seq, const GuidanceConfig& cfg)
{
    cfg.validate();
    const Vocab& vocab = model.vocab();
    seq.validate(vocab);

    GuidanceStepResult result;
    LogitMatrix cond = detail::call_model(model, seq);
    result.confidences = token_confidences(softmax_rows(cond), seq, vocab.mask_id, cfg);
    const auto n_remask = target_remask_count(cfg.rho, result.confidences.size());
    result.remasked = select_low_confidence(result.confidences, n_remask);
    TokenSeq uncond_input = build_uncond_input(seq, result.remasked, vocab.mask_id);
    return detail::guided_from_input(model, seq, std::move(uncond_input), std::move(cond), cfg.w,
                                     std::move(result));
}

/// Standard CFG: the unconditional input masks every visible token, prompt included.
template <LogitModel M>
GuidanceStepResult static_cfg_step(M& model, const TokenSeq& seq, double w)
{
    if (!std::isfinite(w) || w < 0.0) throw InvalidConfig("guidance scale w must be finite and >= 0");
    const Vocab& vocab = model.vocab();
    seq.validate(vocab);

    GuidanceStepResult result;
    LogitMatrix cond = detail::call_model(model, seq);
    result.remasked = remaskable_positions(seq, vocab.mask_id, RemaskScope::all_nonmask);
    TokenSeq uncond_input = build_uncond_input(seq, result.remasked, vocab.mask_id);
    return detail::guided_from_input(model, seq, std::move(uncond_input), std::move(cond), w, std::move(result));
}

inline std::string_view to_string(ConfidenceMetric m)
{
    switch (m)
    {
    case ConfidenceMetric::argmax_prob: return "argmax_prob";
    case ConfidenceMetric::current_token_prob: return "current_token_prob";
    case ConfidenceMetric::neg_entropy: return "neg_entropy";
    }
    return "?";
}

inline std::string_view to_string(RemaskScope s)
{
    return s == RemaskScope::all_nonmask ? "all_nonmask" : "generated_only";
}

}  // namespace acfg
