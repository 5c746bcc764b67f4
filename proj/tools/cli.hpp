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

// The `acfg` command-line tool. Exit codes: 0 success, 1 runtime error,
// 2 configuration error.

#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acfg/acfg.hpp"

namespace acfg::cli
{
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

struct Options
{
    // task
    std::string task = "sort";
    std::size_t length = 8;
    std::size_t alphabet = 0;
    std::size_t digits = 2;
    std::size_t base = 10;
    std::size_t clues = 7;
    std::size_t n_train = 5000;
    std::size_t n_eval = 500;

    // model
    std::string model_path;
    std::string endpoint;
    std::size_t radius = 1;
    double alpha = 0.1;
    std::size_t masking_samples = 8;
    int timeout_ms = 10000;

    // decoding
    std::size_t gen_len = 0;  ///< 0: the task's answer length
    std::size_t steps = 0;    ///< 0: gen_len
    std::string mode = "acfg";
    double w = 0.5;
    double rho = 0.7;
    std::string metric = "argmax_prob";
    std::string scope = "all_nonmask";
    std::string sampler = "greedy";
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    // subcommand specific
    std::string out_path;
    std::string prompt;
    std::size_t count = 5;
    bool timing = false;
    bool grid_default = false;
    std::vector<double> rhos;
    std::vector<double> ws;
    std::string table_path;
    std::size_t index = 0;
    std::string heatmap_path = "heatmap.csv";
    std::string refinement_path = "refinement.json";
    std::string svg_path;
};

namespace detail
{
template <class E>
E parse_enum(const std::string& text, std::initializer_list<std::pair<const char*, E>> table, const char* what)
{
    std::string names;
    for (const auto& [name, value] : table)
    {
        if (text == name) return value;
        names += names.empty() ? name : std::string(", ") + name;
    }
    throw InvalidConfig(std::string("unknown ") + what + " '" + text + "' (expected " + names + ")");
}

inline DecodeMode parse_mode(const std::string& s)
{
    return parse_enum<DecodeMode>(
        s, {{"none", DecodeMode::none}, {"static_cfg", DecodeMode::static_cfg}, {"acfg", DecodeMode::acfg}}, "mode");
}

inline TaskSpec task_of(const Options& o)
{
    return make_task(o.task, {.length = o.length, .alphabet = o.alphabet, .digits = o.digits, .base = o.base,
                              .clues = o.clues});
}

inline DecodeConfig decode_config(const Options& o, const TaskSpec& task)
{
    DecodeConfig cfg;
    cfg.gen_len = o.gen_len ? o.gen_len : task.answer_len;
    cfg.steps = o.steps ? o.steps : cfg.gen_len;
    cfg.mode = parse_mode(o.mode);
    cfg.guidance.w = o.w;
    cfg.guidance.rho = o.rho;
    cfg.guidance.metric = parse_enum<ConfidenceMetric>(o.metric,
                                                       {{"argmax_prob", ConfidenceMetric::argmax_prob},
                                                        {"current_token_prob", ConfidenceMetric::current_token_prob},
                                                        {"neg_entropy", ConfidenceMetric::neg_entropy}},
                                                       "metric");
    cfg.guidance.scope = parse_enum<RemaskScope>(
        o.scope, {{"all_nonmask", RemaskScope::all_nonmask}, {"generated_only", RemaskScope::generated_only}}, "scope");
    cfg.sampler.kind = parse_enum<SamplerConfig::Kind>(
        o.sampler, {{"greedy", SamplerConfig::Kind::greedy}, {"temperature", SamplerConfig::Kind::temperature}},
        "sampler");
    cfg.sampler.temperature = o.temperature;
    cfg.sampler.seed = o.seed;
    cfg.validate();
    return cfg;
}

inline Dataset dataset_of(const Options& o, const TaskSpec& task)
{
    try
    {
        return generate_dataset(task, o.n_train, o.n_eval, o.seed);
    }
    catch (const InvalidInput& e)
    {
        throw InvalidConfig(e.what());
    }
}

inline CountModelOptions count_options(const Options& o)
{
    return {.radius = o.radius, .alpha = o.alpha, .masking_samples = o.masking_samples, .seed = rng::mix(o.seed, 1)};
}

/// --endpoint, else --model, else a CountModel trained in memory on the train split.
inline AnyModel model_of(const Options& o, const TaskSpec& task, const Dataset& data)
{
    if (!o.endpoint.empty() && !o.model_path.empty()) throw InvalidConfig("--model and --endpoint are exclusive");
    AnyModel model;
    if (!o.endpoint.empty())
        model = AnyModel(std::make_shared<RemoteModel>(o.endpoint, std::chrono::milliseconds(o.timeout_ms)));
    else if (!o.model_path.empty())
        model = AnyModel(std::make_shared<CountModel>(CountModel::load(o.model_path)));
    else
    {
        if (data.train.empty()) throw InvalidConfig("no --model given and --n-train is 0");
        model = AnyModel(
            std::make_shared<CountModel>(count_model_train(training_corpus(data.train), task.vocab, count_options(o))));
    }
    if (!model.vocab().compatible(task.vocab))
        throw InvalidConfig("model vocabulary (size " + std::to_string(model.vocab().size) +
                            ") does not match task '" + task.name + "' (size " + std::to_string(task.vocab.size) +
                            ")");
    return model;
}

inline std::vector<std::string> split_commas(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string part; std::getline(in, part, ',');)
        if (!part.empty()) out.push_back(part);
    return out;
}

inline int cmd_train(const Options& o, std::ostream& out)
{
    if (!o.endpoint.empty() || !o.model_path.empty()) throw InvalidConfig("train builds a model; drop --model/--endpoint");
    if (o.n_train == 0) throw InvalidConfig("--n-train must be positive");
    const auto task = task_of(o);
    const auto data = dataset_of(o, task);
    const auto model = count_model_train(training_corpus(data.train), task.vocab, count_options(o));
    model.save(o.out_path);
    out << "trained count model on " << data.train.size() << " " << task.name << " sequences: "
        << model.table().size() << " contexts, " << model.total_tuples() << " tuples -> " << o.out_path << '\n';
    return kExitOk;
}

inline int cmd_generate(const Options& o, std::ostream& out)
{
    const auto task = task_of(o);
    const auto cfg = decode_config(o, task);
    const auto data = dataset_of(o, task);
    auto model = model_of(o, task, data);

    std::vector<Instance> todo;
    if (!o.prompt.empty())
    {
        try
        {
            todo.push_back({task.render_prompt(o.prompt), {}});
        }
        catch (const InvalidInput& e)
        {
            throw InvalidConfig(std::string("--prompt: ") + e.what());
        }
    }
    else
    {
        for (std::size_t i = 0; i < std::min(o.count, data.eval.size()); ++i) todo.push_back(data.eval[i]);
    }

    for (std::size_t i = 0; i < todo.size(); ++i)
    {
        DecodeConfig c = cfg;
        c.sampler.seed = rng::mix(o.seed, i, 0x73616d70);
        const auto r = decode(model, todo[i].prompt, c);
        std::span<const TokenId> gen(r.final.ids.begin() + static_cast<std::ptrdiff_t>(r.final.prompt_len),
                                     r.final.ids.end());
        out << render_tokens(task.vocab, todo[i].prompt.ids) << " " << render_tokens(task.vocab, gen);
        if (!todo[i].answer.empty() && cfg.gen_len == task.answer_len)
            out << (task.check(todo[i], gen) ? "  [correct]" : "  [wrong]");
        out << '\n';
    }
    return kExitOk;
}

inline int cmd_bench(const Options& o, std::ostream& out)
{
    const auto task = task_of(o);
    std::vector<DecodeConfig> configs;
    Options each = o;
    for (const auto& m : split_commas(o.mode))
    {
        each.mode = m;
        configs.push_back(decode_config(each, task));
    }
    if (configs.empty()) throw InvalidConfig("--mode is empty");
    const auto data = dataset_of(o, task);
    auto model = model_of(o, task, data);

    std::vector<EvalReport> reports;
    for (const auto& cfg : configs) reports.push_back(evaluate(model, task, data.eval, cfg, o.seed, o.jobs));
    write_reports_csv(out, reports, o.timing);
    return kExitOk;
}

inline int cmd_ablate(const Options& o, std::ostream& out)
{
    AblationGrid grid;
    if (o.grid_default && (!o.rhos.empty() || !o.ws.empty()))
        throw InvalidConfig("--grid-default cannot be combined with --rhos/--ws");
    if (!o.rhos.empty()) grid.rhos = o.rhos;
    if (!o.ws.empty()) grid.ws = o.ws;

    const auto task = task_of(o);
    Options acfg_opts = o;
    acfg_opts.mode = "acfg";
    const auto base = decode_config(acfg_opts, task);
    for (double rho : grid.rhos)
    {
        auto c = base;
        c.guidance.rho = rho;
        c.validate();
    }
    for (double w : grid.ws)
    {
        auto c = base;
        c.guidance.w = w;
        c.validate();
    }
    const auto data = dataset_of(o, task);
    auto model = model_of(o, task, data);

    const auto reports = ablate(model, task, data.eval, base, grid, o.seed, o.jobs);
    write_reports_csv(out, reports, o.timing);
    if (!o.table_path.empty())
    {
        std::ofstream table(o.table_path);
        if (!table) throw IoError("cannot open '" + o.table_path + "' for writing");
        write_ablation_table(table, reports, grid);
    }
    return kExitOk;
}

inline int cmd_trace_demo(const Options& o, std::ostream& out)
{
    const auto task = task_of(o);
    const auto cfg = decode_config(o, task);
    const auto data = dataset_of(o, task);
    if (o.index >= data.eval.size())
        throw InvalidConfig("--index " + std::to_string(o.index) + " is outside the eval split");
    auto model = model_of(o, task, data);

    const auto& inst = data.eval[o.index];
    DecodeConfig c = cfg;
    c.sampler.seed = rng::mix(o.seed, o.index, 0x73616d70);
    const auto result = decode(model, inst.prompt, c);
    const auto heat = build_heatmap(result.traces);
    export_heatmap(heat, o.heatmap_path);
    export_refinement(result, o.refinement_path);
    if (!o.svg_path.empty()) export_heatmap_svg(heat, o.svg_path);

    std::span<const TokenId> gen(result.final.ids.begin() + static_cast<std::ptrdiff_t>(result.final.prompt_len),
                                 result.final.ids.end());
    out << render_tokens(task.vocab, inst.prompt.ids) << " " << render_tokens(task.vocab, gen) << '\n';
    out << "heatmap: " << o.heatmap_path << " (" << heat.steps << " steps x " << heat.positions.size()
        << " positions), aggregates: " << aggregates_path_for(o.heatmap_path) << '\n';
    out << "refinement: " << o.refinement_path << '\n';
    if (!o.svg_path.empty()) out << "svg: " << o.svg_path << '\n';
    return kExitOk;
}

inline int cmd_serve_check(const Options& o, std::ostream& out)
{
    RemoteModel remote(o.endpoint, std::chrono::milliseconds(o.timeout_ms));
    const auto& h = remote.hello();
    TokenSeq probe;
    probe.ids.assign(o.length, remote.vocab().mask_id);
    const auto logits = remote.logits(probe);
    out << "handshake ok: protocol " << h.version << ", vocab_size " << h.vocab_size << ", mask_id " << h.mask_id
        << '\n';
    out << "logits ok: " << logits.rows() << "x" << logits.cols() << " finite\n";
    return kExitOk;
}
}  // namespace detail

/// Parses argv, runs one subcommand, and maps failures to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"Adaptive classifier-free guidance for masked diffusion decoding"};
    app.name("acfg");
    app.allow_config_extras(false);
    app.set_config("--config", "", "Read options from a TOML/INI file; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    auto add_task = [&](CLI::App* sub) {
        sub->add_option("--task", o.task, "copy | sort | mod_add | sudoku4")->capture_default_str();
        sub->add_option("--length", o.length, "Sequence length for copy/sort")->capture_default_str();
        sub->add_option("--alphabet", o.alphabet, "Symbol count (0: task default)")->capture_default_str();
        sub->add_option("--digits", o.digits, "Operand digits for mod_add")->capture_default_str();
        sub->add_option("--base", o.base, "Number base for mod_add")->capture_default_str();
        sub->add_option("--clues", o.clues, "Givens per sudoku4 puzzle")->capture_default_str();
        sub->add_option("--n-train", o.n_train, "Training instances")->capture_default_str();
        sub->add_option("--n-eval", o.n_eval, "Held-out eval instances")->capture_default_str();
        sub->add_option("--seed", o.seed, "Seed for data, training and sampling")
            ->envname("ACFG_SEED")
            ->capture_default_str();
    };
    auto add_counts = [&](CLI::App* sub) {
        sub->add_option("--radius", o.radius, "Count model context radius")->capture_default_str();
        sub->add_option("--alpha", o.alpha, "Count model smoothing")->capture_default_str();
        sub->add_option("--masking-samples", o.masking_samples, "Corrupted copies per training sequence")
            ->capture_default_str();
    };
    auto add_model = [&](CLI::App* sub) {
        add_counts(sub);
        sub->add_option("--model", o.model_path, "Count model file (read-only)");
        sub->add_option("--endpoint", o.endpoint, "Remote backend: stdio:<command> or tcp:<host>:<port>");
        sub->add_option("--timeout-ms", o.timeout_ms, "Remote response timeout")->capture_default_str();
    };
    auto add_decode = [&](CLI::App* sub) {
        sub->add_option("--gen-len", o.gen_len, "Generated tokens (0: task answer length)")->capture_default_str();
        sub->add_option("--steps", o.steps, "Decode steps (0: gen-len)")->capture_default_str();
        sub->add_option("--mode", o.mode, "none | static_cfg | acfg")->capture_default_str();
        sub->add_option("--w", o.w, "Guidance scale")->capture_default_str();
        sub->add_option("--rho", o.rho, "Re-masking proportion")->capture_default_str();
        sub->add_option("--metric", o.metric, "argmax_prob | current_token_prob | neg_entropy")
            ->capture_default_str();
        sub->add_option("--scope", o.scope, "all_nonmask | generated_only")->capture_default_str();
        sub->add_option("--sampler", o.sampler, "greedy | temperature")->capture_default_str();
        sub->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
        sub->add_option("--jobs", o.jobs, "Worker threads for evaluation")->capture_default_str();
    };

    auto* train = app.add_subcommand("train", "Fit a count model and write it to --out");
    add_task(train);
    add_counts(train);
    train->add_option("--out", o.out_path, "Model file to write")->required();

    auto* generate = app.add_subcommand("generate", "Decode eval instances or a --prompt");
    add_task(generate);
    add_model(generate);
    add_decode(generate);
    generate->add_option("--prompt", o.prompt, "Prompt text, e.g. \"d b a c\" for sort");
    generate->add_option("--count", o.count, "Eval instances to decode without --prompt")->capture_default_str();

    auto* bench = app.add_subcommand("bench", "Evaluate and print a CSV report (comma-separated --mode list)");
    add_task(bench);
    add_model(bench);
    add_decode(bench);
    bench->add_flag("--timing", o.timing, "Report wall time (otherwise 0, for byte-stable output)");

    auto* abl = app.add_subcommand("ablate", "Sweep rho x w with A-CFG and print a CSV report");
    add_task(abl);
    add_model(abl);
    add_decode(abl);
    abl->add_flag("--grid-default", o.grid_default, "rho in {0.1,...,0.9}, w in {0,...,2} (the default)");
    abl->add_option("--rhos", o.rhos, "Custom rho values")->delimiter(',');
    abl->add_option("--ws", o.ws, "Custom w values")->delimiter(',');
    abl->add_option("--table", o.table_path, "Also write an exact-match table here");
    abl->add_flag("--timing", o.timing, "Report wall time");

    auto* trace = app.add_subcommand("trace-demo", "Decode one instance and export heatmap/refinement traces");
    add_task(trace);
    add_model(trace);
    add_decode(trace);
    trace->add_option("--index", o.index, "Eval instance to trace")->capture_default_str();
    trace->add_option("--heatmap", o.heatmap_path, "Heatmap CSV path")->capture_default_str();
    trace->add_option("--refinement", o.refinement_path, "Refinement JSON path")->capture_default_str();
    trace->add_option("--svg", o.svg_path, "Also render the heatmap as SVG");

    auto* check = app.add_subcommand("serve-check", "Handshake plus one logits round-trip against --endpoint");
    check->add_option("--endpoint", o.endpoint, "stdio:<command> or tcp:<host>:<port>")->required();
    check->add_option("--length", o.length, "Probe length")->capture_default_str();
    check->add_option("--timeout-ms", o.timeout_ms, "Response timeout")->capture_default_str();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::Success& e)
    {
        return app.exit(e, out, err);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e, out, err);
        return kExitConfig;
    }

    try
    {
        if (*train) return detail::cmd_train(o, out);
        if (*generate) return detail::cmd_generate(o, out);
        if (*bench) return detail::cmd_bench(o, out);
        if (*abl) return detail::cmd_ablate(o, out);
        if (*trace) return detail::cmd_trace_demo(o, out);
        if (*check) return detail::cmd_serve_check(o, out);
    }
    catch (const InvalidConfig& e)
    {
        err << "acfg: configuration error: " << e.what() << '\n';
        return kExitConfig;
    }
    catch (const std::exception& e)
    {
        err << "acfg: error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace acfg::cli
