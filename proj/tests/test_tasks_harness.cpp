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

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <sstream>

#include "acfg/count_model.hpp"
#include "acfg/harness.hpp"
#include "acfg/tasks.hpp"
#include "support.hpp"

using namespace acfg;

namespace
{
/// Knows every answer: puts a large logit on the reference token at each generated slot.
class AnswerModel
{
public:
    AnswerModel(const TaskSpec& task, std::span<const Instance> instances) : vocab_(task.vocab)
    {
        for (const auto& inst : instances) answers_[inst.prompt.ids] = inst.answer;
    }
    const Vocab& vocab() const { return vocab_; }
    LogitMatrix logits(const TokenSeq& seq) const
    {
        LogitMatrix out(seq.size(), vocab_.size);
        for (const auto& [prompt, answer] : answers_)
        {
            if (seq.size() != prompt.size() + answer.size()) continue;
            if (!std::equal(prompt.begin(), prompt.end(), seq.ids.begin())) continue;
            for (std::size_t i = 0; i < answer.size(); ++i)
                out(prompt.size() + i, static_cast<std::size_t>(answer[i])) = 10.0f - static_cast<float>(i);
        }
        return out;
    }

private:
    Vocab vocab_;
    std::map<std::vector<TokenId>, std::vector<TokenId>> answers_;
};

std::uint64_t parse_digits(std::span<const TokenId> ids, std::size_t base)
{
    std::uint64_t v = 0;
    for (auto id : ids) v = v * base + static_cast<std::uint64_t>(id - 3);
    return v;
}
}  // namespace

TEST_CASE("copy task", "[tasks]")
{
    auto t = make_task("copy", {.length = 3, .alphabet = 2});
    CHECK(t.vocab.size == 4);
    CHECK(t.vocab.mask_id == 0);
    CHECK(t.distinct_instances == 8);
    std::set<std::vector<TokenId>> prompts;
    for (std::uint64_t c = 0; c < 8; ++c)
    {
        const auto inst = t.instance_at(c);
        REQUIRE(inst.prompt.size() == t.prompt_len);
        REQUIRE(inst.prompt.prompt_len == t.prompt_len);
        REQUIRE(inst.prompt.ids.back() == *t.vocab.id_of("="));
        REQUIRE(std::equal(inst.answer.begin(), inst.answer.end(), inst.prompt.ids.begin()));
        REQUIRE(t.check(inst, inst.answer));
        prompts.insert(inst.prompt.ids);
    }
    CHECK(prompts.size() == 8);
    CHECK(t.render_prompt("a b a").ids == std::vector<TokenId>{2, 3, 2, 1});
    CHECK_THROWS_AS(t.render_prompt("a b"), InvalidInput);
    CHECK_THROWS_AS(t.render_prompt("a b z"), InvalidInput);
}

TEST_CASE("sort task", "[tasks]")
{
    auto t = make_task("sort", {.length = 4});
    CHECK(t.distinct_instances == 24);
    std::set<std::vector<TokenId>> prompts;
    for (std::uint64_t c = 0; c < 24; ++c)
    {
        const auto inst = t.instance_at(c);
        std::vector<TokenId> body(inst.prompt.ids.begin(), inst.prompt.ids.end() - 1);
        auto sorted = body;
        std::sort(sorted.begin(), sorted.end());
        REQUIRE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
        REQUIRE(inst.answer == sorted);
        prompts.insert(body);
    }
    CHECK(prompts.size() == 24);
    CHECK(make_task("sort", {.length = 3, .alphabet = 5}).distinct_instances == 60);
    CHECK_THROWS_AS(make_task("sort", {.length = 5, .alphabet = 3}), InvalidConfig);
}

TEST_CASE("mod_add task", "[tasks]")
{
    auto t = make_task("mod_add", {.digits = 2, .base = 10});
    CHECK(t.distinct_instances == 10000);
    CHECK(t.prompt_len == 6);
    CHECK(t.answer_len == 2);
    std::mt19937_64 gen(1);
    for (int i = 0; i < 500; ++i)
    {
        const auto inst = t.instance_at(gen() % t.distinct_instances);
        const auto a = parse_digits(std::span(inst.prompt.ids).subspan(0, 2), 10);
        const auto b = parse_digits(std::span(inst.prompt.ids).subspan(3, 2), 10);
        REQUIRE(inst.prompt.ids[2] == *t.vocab.id_of("+"));
        REQUIRE(parse_digits(inst.answer, 10) == (a + b) % 100);
    }
    const auto p = t.render_prompt("47 + 85");
    CHECK(t.instance_at(47 * 100 + 85).prompt == p);
    CHECK(render_tokens(t.vocab, t.instance_at(47 * 100 + 85).answer) == "3 2");
    CHECK_THROWS_AS(t.render_prompt("4 + 85"), InvalidInput);
    CHECK_THROWS_AS(t.render_prompt("4x + 85"), InvalidInput);
}

TEST_CASE("sudoku4 task", "[tasks]")
{
    CHECK(sudoku4::all_grids().size() == 288);
    for (const auto& g : sudoku4::all_grids()) REQUIRE(sudoku4::is_solution(g));

    auto t = make_task("sudoku4", {.clues = 6});
    REQUIRE(t.distinct_instances > 0);
    std::mt19937_64 gen(2);
    for (int i = 0; i < 200; ++i)
    {
        const auto inst = t.instance_at(gen() % t.distinct_instances);
        sudoku4::Grid puzzle{};
        std::size_t givens = 0;
        for (std::size_t c = 0; c < 16; ++c)
        {
            const auto v = inst.prompt.ids[c] - 2;
            puzzle[c] = static_cast<std::uint8_t>(v);
            givens += v != 0;
        }
        REQUIRE(givens == 6);
        std::vector<sudoku4::Grid> sols;
        REQUIRE(sudoku4::solve(puzzle, 5, &sols) == 1);
        for (std::size_t c = 0; c < 16; ++c) REQUIRE(inst.answer[c] == static_cast<TokenId>(2 + sols[0][c]));
        REQUIRE(t.check(inst, inst.answer));

        auto broken = inst.answer;
        std::swap(broken[0], broken[1]);
        REQUIRE(!t.check(inst, broken));
    }
    // Fewer than four clues never pins a grid down.
    CHECK(make_task("sudoku4", {.clues = 3}).distinct_instances == 0);
    CHECK_THROWS_AS(make_task("sudoku4", {.clues = 17}), InvalidConfig);
}

TEST_CASE("make_task rejects unknown names", "[tasks]")
{
    CHECK_THROWS_AS(make_task("parity"), InvalidConfig);
}

TEST_CASE("generate_dataset", "[tasks]")
{
    auto t = make_task("sort", {.length = 5});
    const auto a = generate_dataset(t, 50, 20, 9);
    const auto b = generate_dataset(t, 50, 20, 9);
    CHECK(a.train == b.train);
    CHECK(a.eval == b.eval);
    CHECK(a.train.size() == 50);
    CHECK(a.eval.size() == 20);
    std::set<std::vector<TokenId>> prompts;
    for (const auto& i : a.train) prompts.insert(i.prompt.ids);
    for (const auto& i : a.eval) prompts.insert(i.prompt.ids);
    CHECK(prompts.size() == 70);
    CHECK(generate_dataset(t, 50, 20, 10).train != a.train);

    // Dense regime: the whole space.
    const auto all = generate_dataset(t, 100, 20, 1);
    prompts.clear();
    for (const auto& i : all.train) prompts.insert(i.prompt.ids);
    for (const auto& i : all.eval) prompts.insert(i.prompt.ids);
    CHECK(prompts.size() == 120);

    CHECK_THROWS_AS(generate_dataset(t, 100, 21, 1), InvalidInput);
    CHECK_THROWS_AS(generate_dataset(t, 10, 0, 1), InvalidInput);

    const auto corpus = training_corpus(a.train);
    REQUIRE(corpus.size() == 50);
    CHECK(corpus[0].size() == t.prompt_len + t.answer_len);
    CHECK(corpus[0].prompt_len == t.prompt_len);
}

TEST_CASE("evaluate scores a perfect model at 1.0", "[harness]")
{
    auto t = make_task("mod_add");
    const auto data = generate_dataset(t, 0, 40, 3);
    AnswerModel model(t, data.eval);
    DecodeConfig cfg;
    cfg.gen_len = t.answer_len;
    cfg.steps = t.answer_len;
    for (auto mode : {DecodeMode::none, DecodeMode::acfg, DecodeMode::static_cfg})
    {
        cfg.mode = mode;
        const auto rep = evaluate(model, t, data.eval, cfg, 1);
        CHECK(rep.exact_match == 1.0);
        CHECK(rep.token_accuracy == 1.0);
        CHECK(rep.n_instances == 40);
        // Logit 10 at the first slot, 9 at the second: one reveal per step in order.
        CHECK(rep.mean_commit_step == Catch::Approx(0.5));
    }
}

TEST_CASE("evaluate is independent of the thread count", "[harness]")
{
    auto t = make_task("sort", {.length = 5});
    const auto data = generate_dataset(t, 80, 30, 4);
    auto model = count_model_train(training_corpus(data.train), t.vocab, {.masking_samples = 2});
    DecodeConfig cfg;
    cfg.gen_len = 5;
    cfg.steps = 5;
    cfg.sampler.kind = SamplerConfig::Kind::temperature;
    cfg.sampler.temperature = 0.8;
    const auto one = evaluate(model, t, data.eval, cfg, 7, 1);
    const auto four = evaluate(model, t, data.eval, cfg, 7, 4);
    CHECK(one.same_outcome(four));
    const auto outcomes1 = evaluate_instances(model, t, data.eval, cfg, 7, 1);
    const auto outcomes3 = evaluate_instances(model, t, data.eval, cfg, 7, 3);
    for (std::size_t i = 0; i < outcomes1.size(); ++i) REQUIRE(outcomes1[i].generated == outcomes3[i].generated);
}

TEST_CASE("evaluate validates its inputs", "[harness]")
{
    auto t = make_task("copy", {.length = 3});
    const auto data = generate_dataset(t, 0, 5, 1);
    AnswerModel model(t, data.eval);
    DecodeConfig cfg;
    cfg.gen_len = 4;
    cfg.steps = 4;
    CHECK_THROWS_AS(evaluate(model, t, data.eval, cfg, 1), InvalidConfig);
    cfg.gen_len = 3;
    cfg.steps = 3;
    CHECK_THROWS_AS(evaluate(model, t, std::span<const Instance>{}, cfg, 1), InvalidInput);
    auto other = make_task("copy", {.length = 3, .alphabet = 5});
    CHECK_THROWS_AS(evaluate(model, other, data.eval, cfg, 1), InvalidConfig);

    acfg_test::FailingModel failing(model, 3);
    CHECK_THROWS_AS(evaluate(failing, t, data.eval, cfg, 1), DecodeError);
}

TEST_CASE("ablate walks the grid in w-major order", "[harness]")
{
    auto t = make_task("copy", {.length = 3});
    const auto data = generate_dataset(t, 0, 6, 1);
    AnswerModel model(t, data.eval);
    DecodeConfig cfg;
    cfg.gen_len = 3;
    cfg.steps = 3;
    AblationGrid grid;
    CHECK(grid.rhos == std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9});
    CHECK(grid.ws == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});
    const auto reports = ablate(model, t, data.eval, cfg, grid, 5);
    REQUIRE(reports.size() == 25);
    for (std::size_t i = 0; i < 5; ++i)
    {
        for (std::size_t j = 0; j < 5; ++j)
        {
            REQUIRE(reports[i * 5 + j].w == grid.ws[i]);
            REQUIRE(reports[i * 5 + j].rho == grid.rhos[j]);
            REQUIRE(reports[i * 5 + j].mode == DecodeMode::acfg);
        }
    }
    CHECK_THROWS_AS(ablate(model, t, data.eval, cfg, AblationGrid{{}, {1.0}}, 5), InvalidConfig);

    std::ostringstream table;
    write_ablation_table(table, reports, grid);
    std::size_t lines = 0;
    for (char c : table.str()) lines += c == '\n';
    CHECK(lines == 6);
    CHECK(table.str().find("1.000") != std::string::npos);
}

TEST_CASE("report CSV", "[harness]")
{
    EvalReport r;
    r.task = "sort";
    r.mode = DecodeMode::acfg;
    r.rho = 0.7;
    r.w = 0.5;
    r.seed = 12;
    r.n_instances = 500;
    r.exact_match = 0.912;
    r.token_accuracy = 0.98125;
    r.mean_commit_step = 3.5;
    r.wall_ms = 42.25;
    CHECK(report_csv_row(r) == "sort,acfg,0.7,0.5,12,500,0.912000,0.981250,3.500000,42.250");
    CHECK(report_csv_row(r, false) == "sort,acfg,0.7,0.5,12,500,0.912000,0.981250,3.500000,0.000");

    std::ostringstream out;
    std::vector<EvalReport> reps{r, r};
    write_reports_csv(out, reps, false);
    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == kReportCsvHeader);
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 2);
}
