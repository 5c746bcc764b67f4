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

#include <chrono>
#include <cstdio>
#include <exception>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "acfg/decoder.hpp"
#include "acfg/tasks.hpp"

namespace acfg
{
struct EvalReport
{
    std::string task;
    DecodeMode mode = DecodeMode::none;
    double rho = 0.0;
    double w = 0.0;
    std::uint64_t seed = 0;
    std::size_t n_instances = 0;
    double exact_match = 0.0;
    double token_accuracy = 0.0;
    double mean_commit_step = 0.0;
    double wall_ms = 0.0;

    /// Equality on everything except wall time.
    bool same_outcome(const EvalReport& o) const
    {
        return task == o.task && mode == o.mode && rho == o.rho && w == o.w && seed == o.seed &&
               n_instances == o.n_instances && exact_match == o.exact_match &&
               token_accuracy == o.token_accuracy && mean_commit_step == o.mean_commit_step;
    }

    /// Equality of the measured metrics only (ignores labels and wall time).
    bool same_metrics(const EvalReport& o) const
    {
        return n_instances == o.n_instances && exact_match == o.exact_match &&
               token_accuracy == o.token_accuracy && mean_commit_step == o.mean_commit_step;
    }
};

struct InstanceOutcome
{
    std::vector<TokenId> generated;
    bool exact = false;
    std::size_t tokens_correct = 0;
    double mean_commit_step = 0.0;
};

namespace detail
{
template <LogitModel M>
InstanceOutcome run_instance(M& model, const TaskSpec& task, const Instance& inst, DecodeConfig cfg,
                             std::uint64_t seed, std::size_t index)
{
    cfg.sampler.seed = rng::mix(seed, index, 0x73616d70);
    const DecodeResult r = decode(model, inst.prompt, cfg);
    InstanceOutcome out;
    out.generated.assign(r.final.ids.begin() + static_cast<std::ptrdiff_t>(r.final.prompt_len), r.final.ids.end());
    out.exact = task.check(inst, out.generated);
    for (std::size_t i = 0; i < out.generated.size(); ++i) out.tokens_correct += out.generated[i] == inst.answer[i];
    double total = 0.0;
    for (auto s : r.commit_step) total += static_cast<double>(s);
    out.mean_commit_step = total / static_cast<double>(r.commit_step.size());
    return out;
}
}  // namespace detail

/**
 * Decodes every instance and scores it. Instances are spread over `jobs`
 * threads (the model must tolerate concurrent logits() calls when jobs > 1);
 * outcomes are gathered in instance order, so the report does not depend on
 * scheduling. Each instance gets its own sampler seed derived from `seed`.
 */
template <LogitModel M>
std::vector<InstanceOutcome> evaluate_instances(M& model, const TaskSpec& task, std::span<const Instance> instances,
                                                const DecodeConfig& cfg, std::uint64_t seed, std::size_t jobs = 1)
{
    if (instances.empty()) throw InvalidInput("evaluate: empty eval set");
    if (!model.vocab().compatible(task.vocab)) throw InvalidConfig("evaluate: model vocabulary does not match task");
    if (cfg.gen_len != task.answer_len)
        throw InvalidConfig("evaluate: gen_len " + std::to_string(cfg.gen_len) + " differs from task answer length " +
                            std::to_string(task.answer_len));
    cfg.validate();

    std::vector<InstanceOutcome> outcomes(instances.size());
    std::vector<std::exception_ptr> errors(instances.size());
    auto worker = [&](std::size_t first, std::size_t stride) {
        for (std::size_t i = first; i < instances.size(); i += stride)
        {
            try
            {
                outcomes[i] = detail::run_instance(model, task, instances[i], cfg, seed, i);
            }
            catch (...)
            {
                errors[i] = std::current_exception();
            }
        }
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, instances.size()));
    if (jobs == 1)
        worker(0, 1);
    else
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker, t, jobs);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return outcomes;
}

template <LogitModel M>
EvalReport evaluate(M& model, const TaskSpec& task, std::span<const Instance> instances, const DecodeConfig& cfg,
                    std::uint64_t seed, std::size_t jobs = 1)
{
    const auto start = std::chrono::steady_clock::now();
    const auto outcomes = evaluate_instances(model, task, instances, cfg, seed, jobs);

    EvalReport rep;
    rep.task = task.name;
    rep.mode = cfg.mode;
    rep.rho = cfg.guidance.rho;
    rep.w = cfg.guidance.w;
    rep.seed = seed;
    rep.n_instances = outcomes.size();
    std::size_t exact = 0, correct = 0;
    double commit = 0.0;
    for (const auto& o : outcomes)
    {
        exact += o.exact;
        correct += o.tokens_correct;
        commit += o.mean_commit_step;
    }
    const auto n = static_cast<double>(outcomes.size());
    rep.exact_match = static_cast<double>(exact) / n;
    rep.token_accuracy = static_cast<double>(correct) / (n * static_cast<double>(task.answer_len));
    rep.mean_commit_step = commit / n;
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

struct AblationGrid
{
    std::vector<double> rhos{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> ws{0.0, 0.5, 1.0, 1.5, 2.0};
};

/// A-CFG evaluated at every (w, rho) cell; rows follow `ws`, columns `rhos`.
template <LogitModel M>
std::vector<EvalReport> ablate(M& model, const TaskSpec& task, std::span<const Instance> instances,
                               const DecodeConfig& base, const AblationGrid& grid, std::uint64_t seed,
                               std::size_t jobs = 1)
{
    if (grid.rhos.empty() || grid.ws.empty()) throw InvalidConfig("ablate: empty grid");
    std::vector<EvalReport> out;
    for (double w : grid.ws)
    {
        for (double rho : grid.rhos)
        {
            DecodeConfig cfg = base;
            cfg.mode = DecodeMode::acfg;
            cfg.guidance.w = w;
            cfg.guidance.rho = rho;
            out.push_back(evaluate(model, task, instances, cfg, seed, jobs));
        }
    }
    return out;
}

inline constexpr const char* kReportCsvHeader =
    "task,mode,rho,w,seed,n,exact_match,token_accuracy,mean_commit_step,wall_ms";

/// One CSV row (no newline). With include_timing = false, wall_ms is written as 0.
inline std::string report_csv_row(const EvalReport& r, bool include_timing = true)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%g,%g,%llu,%zu,%.6f,%.6f,%.6f,%.3f", r.task.c_str(),
                  std::string(to_string(r.mode)).c_str(), r.rho, r.w, static_cast<unsigned long long>(r.seed),
                  r.n_instances, r.exact_match, r.token_accuracy, r.mean_commit_step,
                  include_timing ? r.wall_ms : 0.0);
    return buf;
}

inline void write_reports_csv(std::ostream& out, std::span<const EvalReport> reports, bool include_timing = true)
{
    out << kReportCsvHeader << '\n';
    for (const auto& r : reports) out << report_csv_row(r, include_timing) << '\n';
}

/// Exact-match table with w down the side and rho across the top.
inline void write_ablation_table(std::ostream& out, std::span<const EvalReport> reports, const AblationGrid& grid)
{
    char buf[64];
    out << "exact_match    rho:";
    for (double rho : grid.rhos)
    {
        std::snprintf(buf, sizeof buf, "%8.2f", rho);
        out << buf;
    }
    out << '\n';
    for (std::size_t i = 0; i < grid.ws.size(); ++i)
    {
        std::snprintf(buf, sizeof buf, "  w = %-13.2f", grid.ws[i]);
        out << buf;
        for (std::size_t j = 0; j < grid.rhos.size(); ++j)
        {
            std::snprintf(buf, sizeof buf, "%8.3f", reports[i * grid.rhos.size() + j].exact_match);
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace acfg
