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

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acfg/model.hpp"
#include "acfg/rng.hpp"

namespace acfg
{
struct CountModelOptions
{
    std::size_t radius = 1;
    double alpha = 0.1;
    /// Corrupted copies drawn per training sequence, on top of one clean pass.
    std::size_t masking_samples = 8;
    std::uint64_t seed = 0;
};

/**
 * Bidirectional context-count model with add-alpha smoothing.
 *
 * Position j is predicted from the `radius` tokens on each side of it. Those
 * tokens may be [MASK]; positions past either end read as the kBos / kEos
 * sentinels, which never collide with real ids. Rows are log-probabilities:
 *
 *     row_j[v] = log((n(ctx_j, v) + alpha) / (n(ctx_j) + alpha * |V|))
 */
class CountModel
{
public:
    static constexpr TokenId kBos = -1;
    static constexpr TokenId kEos = -2;
    static constexpr int kFormatVersion = 1;

    using Context = std::vector<TokenId>;

    struct Row
    {
        std::vector<std::uint64_t> counts;
        std::uint64_t total = 0;
    };

    CountModel(Vocab vocab, std::size_t radius, double alpha)
        : vocab_(std::move(vocab)), radius_(radius), alpha_(alpha)
    {
        vocab_.validate();
        if (radius_ == 0) throw InvalidConfig("count model: radius must be >= 1");
        if (!(alpha_ > 0.0) || !std::isfinite(alpha_)) throw InvalidConfig("count model: alpha must be > 0");
    }

    const Vocab& vocab() const { return vocab_; }
    std::size_t radius() const { return radius_; }
    double alpha() const { return alpha_; }
    std::uint64_t total_tuples() const { return total_tuples_; }
    const std::map<Context, Row>& table() const { return table_; }

    /// Left window then right window around j, padded with sentinels.
    Context context_of(const TokenSeq& seq, std::size_t j) const
    {
        Context ctx;
        ctx.reserve(2 * radius_);
        for (std::size_t d = radius_; d >= 1; --d) ctx.push_back(j >= d ? seq.ids[j - d] : kBos);
        for (std::size_t d = 1; d <= radius_; ++d) ctx.push_back(j + d < seq.size() ? seq.ids[j + d] : kEos);
        return ctx;
    }

    void observe(const Context& ctx, TokenId token)
    {
        if (ctx.size() != 2 * radius_) throw InvalidInput("count model: context width mismatch");
        if (!vocab_.contains(token)) throw InvalidInput("count model: token outside vocabulary");
        auto& row = table_[ctx];
        if (row.counts.empty()) row.counts.assign(vocab_.size, 0);
        ++row.counts[static_cast<std::size_t>(token)];
        ++row.total;
        ++total_tuples_;
    }

    std::uint64_t count(const Context& ctx, TokenId token) const
    {
        auto it = table_.find(ctx);
        return it == table_.end() ? 0 : it->second.counts[static_cast<std::size_t>(token)];
    }

    LogitMatrix logits(const TokenSeq& seq) const
    {
        seq.validate(vocab_);
        const double v = static_cast<double>(vocab_.size);
        LogitMatrix out(seq.size(), vocab_.size);
        for (std::size_t j = 0; j < seq.size(); ++j)
        {
            auto row = out.row(j);
            auto it = table_.find(context_of(seq, j));
            if (it == table_.end())
            {
                std::fill(row.begin(), row.end(), static_cast<float>(-std::log(v)));
                continue;
            }
            const double denom = static_cast<double>(it->second.total) + alpha_ * v;
            for (std::size_t t = 0; t < vocab_.size; ++t)
                row[t] = static_cast<float>(std::log((static_cast<double>(it->second.counts[t]) + alpha_) / denom));
        }
        return out;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json contexts = nlohmann::json::array();
        for (const auto& [ctx, row] : table_)
        {
            nlohmann::json sparse = nlohmann::json::array();
            for (std::size_t t = 0; t < row.counts.size(); ++t)
                if (row.counts[t] != 0) sparse.push_back({t, row.counts[t]});
            contexts.push_back({{"ctx", ctx}, {"counts", std::move(sparse)}});
        }
        return {{"format", "acfg.count_model"},
                {"version", kFormatVersion},
                {"vocab", {{"size", vocab_.size}, {"mask_id", vocab_.mask_id}, {"tokens", vocab_.token_strings}}},
                {"radius", radius_},
                {"alpha", alpha_},
                {"total_tuples", total_tuples_},
                {"contexts", std::move(contexts)}};
    }

    static CountModel from_json(const nlohmann::json& j)
    {
        try
        {
            if (j.at("format").get<std::string>() != "acfg.count_model")
                throw InvalidInput("count model file: unexpected format tag");
            if (j.at("version").get<int>() != kFormatVersion)
                throw InvalidInput("count model file: unsupported version " + j.at("version").dump());
            const auto& jv = j.at("vocab");
            Vocab vocab(jv.at("size").get<std::size_t>(), jv.at("mask_id").get<TokenId>(),
                        jv.at("tokens").get<std::vector<std::string>>());
            CountModel model(std::move(vocab), j.at("radius").get<std::size_t>(), j.at("alpha").get<double>());
            for (const auto& entry : j.at("contexts"))
            {
                auto ctx = entry.at("ctx").get<Context>();
                if (ctx.size() != 2 * model.radius_) throw InvalidInput("count model file: bad context width");
                Row row;
                row.counts.assign(model.vocab_.size, 0);
                for (const auto& pair : entry.at("counts"))
                {
                    const auto t = pair.at(0).get<std::size_t>();
                    if (t >= model.vocab_.size) throw InvalidInput("count model file: token outside vocabulary");
                    row.counts[t] = pair.at(1).get<std::uint64_t>();
                    row.total += row.counts[t];
                }
                model.table_[std::move(ctx)] = std::move(row);
            }
            model.total_tuples_ = j.at("total_tuples").get<std::uint64_t>();
            return model;
        }
        catch (const nlohmann::json::exception& e)
        {
            throw InvalidInput(std::string("count model file: ") + e.what());
        }
    }

    void save(const std::string& path) const
    {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << to_json().dump() << '\n';
        if (!out) throw IoError("failed writing '" + path + "'");
    }

    static CountModel load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open '" + path + "'");
        nlohmann::json j;
        try
        {
            in >> j;
        }
        catch (const nlohmann::json::exception& e)
        {
            throw InvalidInput("count model file '" + path + "': " + e.what());
        }
        return from_json(j);
    }

private:
    Vocab vocab_;
    std::size_t radius_;
    double alpha_;
    std::map<Context, Row> table_;
    std::uint64_t total_tuples_ = 0;
};

/**
 * Fits a CountModel the way a masked denoiser sees data: one clean pass over
 * every sequence, then `masking_samples` corrupted copies, each masking every
 * position independently with a ratio drawn uniformly from [0, 1]. Every
 * position of every copy contributes (context of the copy) -> true token.
 */
inline CountModel count_model_train(const std::vector<TokenSeq>& corpus, const Vocab& vocab,
                                    const CountModelOptions& opts = {})
{
    if (corpus.empty()) throw InvalidInput("count model: empty training corpus");
    CountModel model(vocab, opts.radius, opts.alpha);
    rng::Stream stream(opts.seed);

    for (const auto& seq : corpus)
    {
        seq.validate(vocab);
        if (seq.count(vocab.mask_id) != 0) throw InvalidInput("count model: training sequence contains [MASK]");
        for (std::size_t j = 0; j < seq.size(); ++j) model.observe(model.context_of(seq, j), seq.ids[j]);

        TokenSeq corrupted = seq;
        for (std::size_t s = 0; s < opts.masking_samples; ++s)
        {
            const double ratio = stream.uniform01();
            for (std::size_t j = 0; j < seq.size(); ++j)
                corrupted.ids[j] = stream.uniform01() < ratio ? vocab.mask_id : seq.ids[j];
            for (std::size_t j = 0; j < seq.size(); ++j) model.observe(model.context_of(corrupted, j), seq.ids[j]);
        }
    }
    return model;
}

}  // namespace acfg
