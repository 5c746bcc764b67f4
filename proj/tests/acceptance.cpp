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

// Acceptance gate: one PASS/FAIL line per criterion; exit status is nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>

#include "acfg/acfg.hpp"
#include "support.hpp"

using namespace acfg;

namespace
{
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict
{
    bool pass = true;
    std::string detail;

    void fail(const std::string& why)
    {
        if (pass) detail = why;
        pass = false;
    }
};

int failures = 0;

void report(const char* name, const std::function<Verdict()>& body)
{
    const auto start = Clock::now();
    Verdict v;
    try
    {
        v = body();
    }
    catch (const std::exception& e)
    {
        v.fail(std::string("exception: ") + e.what());
    }
    std::printf("%s  %-38s %7.2fs  %s\n", v.pass ? "PASS" : "FAIL", name, seconds_since(start), v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
}

Verdict oracle_equivalence()
{
    Verdict v;
    std::mt19937_64 gen(1001);
    const auto start = Clock::now();
    float worst = 0.0f;
    for (int t = 0; t < 1000; ++t)
    {
        auto c = acfg_test::random_case(gen);
        const std::size_t pct = gen() % 101;
        const double w = static_cast<double>(gen() % 41) * 0.1;
        const auto got = acfg_step(c.model, c.seq, {.w = w, .rho = static_cast<double>(pct) / 100.0});
        const auto ref = acfg_test::oracle::acfg_step(c.model, c.seq, pct, w);
        if (got.remasked != ref.remasked) v.fail("re-mask set differs in case " + std::to_string(t));
        worst = std::max(worst, got.guided.max_abs_diff(ref.guided));
    }
    const double secs = seconds_since(start);
    if (worst > 1e-6f) v.fail("max |diff| " + std::to_string(worst));
    if (secs >= 10.0) v.fail("took " + std::to_string(secs) + " s");
    if (v.pass) v.detail = "1000 cases, max |diff| " + std::to_string(worst);
    return v;
}

Verdict reductions()
{
    Verdict v;
    std::mt19937_64 gen(2002);
    const auto start = Clock::now();
    std::size_t cases = 0;
    for (int t = 0; t < 4000; ++t)
    {
        auto c = acfg_test::random_case(gen);
        const double w = static_cast<double>(gen() % 41) * 0.1;
        const double rho = static_cast<double>(gen() % 101) / 100.0;

        const auto a = acfg_step(c.model, c.seq, {.w = w, .rho = 0.0});
        if (a.guided.max_abs_diff(a.cond) > 1e-5f) v.fail("rho=0 case " + std::to_string(t));
        const auto b = acfg_step(c.model, c.seq, {.w = 0.0, .rho = rho});
        if (b.guided.max_abs_diff(b.cond) > 1e-5f) v.fail("w=0 case " + std::to_string(t));
        const auto full = acfg_step(c.model, c.seq, {.w = w, .rho = 1.0, .scope = RemaskScope::all_nonmask});
        const auto stat = static_cfg_step(c.model, c.seq, w);
        if (!(full.uncond_input == stat.uncond_input)) v.fail("rho=1 input differs in case " + std::to_string(t));
        if (full.guided.max_abs_diff(stat.guided) > 1e-6f) v.fail("rho=1 guided differs in case " + std::to_string(t));
        cases += 3;
    }
    const double secs = seconds_since(start);
    if (secs >= 30.0) v.fail("took " + std::to_string(secs) + " s");
    if (v.pass) v.detail = std::to_string(cases) + " cases";
    return v;
}

Verdict selection()
{
    Verdict v;
    std::mt19937_64 gen(3003);
    const auto start = Clock::now();
    std::size_t with_ties = 0;
    for (int t = 0; t < 1000; ++t)
    {
        const std::size_t n = 1 + gen() % 40;
        const int levels = 1 + static_cast<int>(gen() % 8);
        std::vector<ConfidenceEntry> entries;
        std::vector<std::pair<float, std::size_t>> pairs;
        for (std::size_t i = 0; i < n; ++i)
        {
            const float s = static_cast<float>(gen() % static_cast<unsigned>(levels)) / static_cast<float>(levels);
            const std::size_t pos = i * 2 + gen() % 2;
            entries.push_back({pos, s});
            pairs.push_back({s, pos});
        }
        std::shuffle(entries.begin(), entries.end(), gen);
        const auto k = static_cast<std::size_t>(gen() % (n + 1));
        if (levels < static_cast<int>(n)) ++with_ties;
        if (select_low_confidence(entries, k) != acfg_test::oracle::lowest(pairs, k))
            v.fail("mismatch in list " + std::to_string(t));
    }
    const double secs = seconds_since(start);
    if (secs >= 5.0) v.fail("took " + std::to_string(secs) + " s");
    if (v.pass) v.detail = "1000 lists, " + std::to_string(with_ties) + " with duplicated scores";
    return v;
}

struct TaskBundle
{
    TaskSpec task;
    Dataset data;
    CountModel model;
};

TaskBundle bundle(const std::string& name, std::uint64_t seed)
{
    auto task = make_task(name);
    auto data = generate_dataset(task, 400, 40, seed);
    auto model = count_model_train(training_corpus(data.train), task.vocab, {.masking_samples = 4, .seed = seed});
    return {std::move(task), std::move(data), std::move(model)};
}

Verdict decode_determinism()
{
    Verdict v;
    std::vector<TaskBundle> tasks;
    for (const char* name : {"copy", "sort", "mod_add", "sudoku4"}) tasks.push_back(bundle(name, 5));
    std::mt19937_64 gen(4004);
    const DecodeMode modes[] = {DecodeMode::none, DecodeMode::static_cfg, DecodeMode::acfg};
    for (int t = 0; t < 100; ++t)
    {
        auto& b = tasks[static_cast<std::size_t>(t) % tasks.size()];
        const std::uint64_t seed = gen();
        DecodeConfig cfg;
        cfg.gen_len = b.task.answer_len;
        cfg.steps = 1 + seed % (2 * cfg.gen_len);
        cfg.mode = modes[seed % 3];
        cfg.guidance.rho = static_cast<double>(seed % 11) / 10.0;
        cfg.guidance.w = static_cast<double>((seed >> 8) % 5) * 0.5;
        if ((seed >> 16) % 2)
        {
            cfg.sampler.kind = SamplerConfig::Kind::temperature;
            cfg.sampler.temperature = 0.7;
        }
        cfg.sampler.seed = seed;
        const auto& inst = b.data.eval[seed % b.data.eval.size()];

        const auto r1 = decode(b.model, inst.prompt, cfg);
        const auto r2 = decode(b.model, inst.prompt, cfg);
        bool same = r1 == r2;
        for (std::size_t k = 0; same && k < r1.traces.size(); ++k)
            for (std::size_t i = 0; same && i < r1.traces[k].candidates.size(); ++i)
                same = std::memcmp(&r1.traces[k].candidates[i].confidence, &r2.traces[k].candidates[i].confidence,
                                   sizeof(float)) == 0;
        if (!same) v.fail("runs differ for " + b.task.name + " seed " + std::to_string(seed));

        const auto schedule = make_schedule(cfg.gen_len, cfg.steps);
        std::size_t masked = cfg.gen_len;
        for (std::size_t k = 0; k < r1.traces.size(); ++k)
        {
            if (r1.traces[k].candidates.size() != masked || r1.traces[k].revealed.size() != schedule.reveal_counts[k])
                v.fail("schedule violated for " + b.task.name + " seed " + std::to_string(seed));
            masked -= r1.traces[k].revealed.size();
        }
        if (masked != 0 || r1.final.count(b.task.vocab.mask_id) != 0)
            v.fail("MASK left after the last step for " + b.task.name);
    }
    if (v.pass) v.detail = "100 (task, seed) pairs over 4 tasks";
    return v;
}

struct EndToEnd
{
    TaskSpec task = make_task("sort", {.length = 8});
    Dataset data;
    std::unique_ptr<CountModel> model;
    DecodeConfig cfg;
};

EndToEnd& e2e()
{
    static EndToEnd s = [] {
        EndToEnd e;
        e.data = generate_dataset(e.task, 5000, 500, 2026);
        e.model = std::make_unique<CountModel>(count_model_train(
            training_corpus(e.data.train), e.task.vocab, {.radius = 1, .alpha = 0.1, .seed = 2026}));
        e.cfg.gen_len = 8;
        e.cfg.steps = 8;
        return e;
    }();
    return s;
}

Verdict end_to_end()
{
    Verdict v;
    auto& e = e2e();
    DecodeConfig plain = e.cfg;
    plain.mode = DecodeMode::none;
    const auto unguided = evaluate(*e.model, e.task, e.data.eval, plain, 7);
    if (unguided.exact_match < 0.90) v.fail("unguided exact match " + std::to_string(unguided.exact_match));

    const auto start = Clock::now();
    const AblationGrid grid;
    const auto reports = ablate(*e.model, e.task, e.data.eval, e.cfg, grid, 7);
    const double secs = seconds_since(start);
    if (reports.size() != 25) v.fail("grid has " + std::to_string(reports.size()) + " cells");
    if (secs >= 300.0) v.fail("grid took " + std::to_string(secs) + " s");
    for (std::size_t j = 0; j < grid.rhos.size(); ++j)
        if (!reports[j].same_metrics(unguided)) v.fail("w=0 row differs from unguided at rho " + std::to_string(grid.rhos[j]));

    double lo = 1.0, hi = 0.0;
    for (const auto& r : reports)
    {
        lo = std::min(lo, r.exact_match);
        hi = std::max(hi, r.exact_match);
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "unguided EM %.3f, grid %.1f s, grid EM range [%.3f, %.3f]", unguided.exact_match,
                  secs, lo, hi);
    if (v.pass) v.detail = buf;
    return v;
}

Verdict trace_fidelity()
{
    Verdict v;
    auto& e = e2e();
    acfg_test::TempDir dir;
    double worst = 0.0;
    for (std::size_t i = 0; i < 20; ++i)
    {
        DecodeConfig cfg = e.cfg;
        cfg.mode = i % 2 ? DecodeMode::acfg : DecodeMode::static_cfg;
        cfg.steps = 4 + i % 5;
        const auto r = decode(*e.model, e.data.eval[i].prompt, cfg);
        const auto heat = build_heatmap(r.traces);
        const auto hp = dir.file("h" + std::to_string(i) + ".csv");
        const auto rp = dir.file("r" + std::to_string(i) + ".json");
        export_heatmap(heat, hp);
        export_refinement(r, rp);
        const auto heat_back = parse_heatmap(hp);
        if (!(heat_back == heat)) v.fail("heatmap round-trip differs for instance " + std::to_string(i));
        if (!(parse_refinement(rp) == build_refinement(r)))
            v.fail("refinement round-trip differs for instance " + std::to_string(i));

        const std::size_t cols = heat_back.positions.size();
        for (std::size_t s = 0; s < heat_back.steps; ++s)
        {
            double total = 0.0, low = 2.0;
            for (std::size_t c = 0; c < cols; ++c)
            {
                const double x = heat_back.at(s, c);
                if (x < 0.0 || x > 1.0) v.fail("confidence outside [0,1]");
                total += x;
                low = std::min(low, x);
            }
            worst = std::max({worst, std::fabs(heat_back.step_mean[s] - total / static_cast<double>(cols)),
                              std::fabs(heat_back.step_min[s] - low)});
        }
    }
    if (worst > 1e-6) v.fail("aggregate drift " + std::to_string(worst));
    if (v.pass) v.detail = "20 decodes, max aggregate drift " + std::to_string(worst);
    return v;
}

Verdict protocol_conformance()
{
    Verdict v;
    const std::string base = std::string("stdio:") + ACFG_FAKE_SERVER;
    RemoteModel remote(base + " --vocab 9 --mask 8");
    std::mt19937_64 gen(7007);
    for (int i = 0; i < 1000; ++i)
    {
        TokenSeq s;
        const std::size_t len = 1 + gen() % 16;
        for (std::size_t j = 0; j < len; ++j) s.ids.push_back(static_cast<TokenId>(gen() % 9));
        const auto m = remote.logits(s);
        if (m.rows() != len || m.cols() != 9 || !m.all_finite()) v.fail("bad shape at request " + std::to_string(i));
    }
    for (const char* mode : {"truncate", "wrong_rows"})
    {
        try
        {
            RemoteModel faulty(base + " --mode " + mode, std::chrono::milliseconds(2000));
            faulty.logits({{1, 2}, 0});
            v.fail(std::string(mode) + " fault went unnoticed");
        }
        catch (const ProtocolError&)
        {
        }
    }
    if (v.pass) v.detail = "1000 round-trips; truncated line and wrong shape raise protocol errors";
    return v;
}
}  // namespace

int main()
{
    std::printf("acceptance criteria\n");
    report("[PRIMARY] oracle equivalence", oracle_equivalence);
    report("[PRIMARY] reduction identities", reductions);
    report("[PRIMARY] selection correctness", selection);
    report("[PRIMARY] decode determinism", decode_determinism);
    report("[PRIMARY] end-to-end desk experiment", end_to_end);
    report("[PRIMARY] trace fidelity", trace_fidelity);
    report("[SECONDARY] protocol (fake server)", protocol_conformance);
    std::printf("%d failing\n", failures);
    return failures == 0 ? 0 : 1;
}
