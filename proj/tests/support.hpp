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

// Shared test helpers. Everything in `oracle` is written from the algorithm
// description without calling into the library's guidance/decoder code, so
// it can serve as an independent reference.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "acfg/mock_model.hpp"
#include "acfg/types.hpp"

namespace acfg_test
{
using acfg::LogitMatrix;
using acfg::TokenId;
using acfg::TokenSeq;
using acfg::Vocab;

/// Wraps a model and counts logits() calls.
template <class M>
class CountingModel
{
public:
    explicit CountingModel(M& inner) : inner_(inner) {}
    LogitMatrix logits(const TokenSeq& seq)
    {
        ++calls;
        return inner_.logits(seq);
    }
    const Vocab& vocab() const { return inner_.vocab(); }
    int calls = 0;

private:
    M& inner_;
};

/// Model that throws after a fixed number of calls.
template <class M>
class FailingModel
{
public:
    FailingModel(M& inner, int fail_on_call) : inner_(inner), fail_on_(fail_on_call) {}
    LogitMatrix logits(const TokenSeq& seq)
    {
        if (++calls == fail_on_) throw acfg::TransportError("injected backend failure");
        return inner_.logits(seq);
    }
    const Vocab& vocab() const { return inner_.vocab(); }
    int calls = 0;

private:
    M& inner_;
    int fail_on_;
};

struct RandomCase
{
    acfg::MockTableModel model;
    TokenSeq seq;
};

inline std::vector<float> random_row(std::mt19937_64& gen, std::size_t width, bool quantized)
{
    std::uniform_real_distribution<float> u(-3.0f, 3.0f);
    std::vector<float> row(width);
    for (auto& v : row) v = quantized ? std::round(u(gen) * 2.0f) / 2.0f : u(gen);
    return row;
}

/**
 * A random table model plus a random sequence. Context entries cover about
 * half of all (position, left, self, right) keys; some rows are shared or
 * quantized so that exact confidence ties occur.
 */
inline RandomCase random_case(std::mt19937_64& gen, std::size_t max_len = 9, std::size_t max_vocab = 6)
{
    const std::size_t vsize = 2 + gen() % (max_vocab - 1);
    const auto mask = static_cast<TokenId>(gen() % vsize);
    Vocab vocab(vsize, mask);
    const std::size_t len = 1 + gen() % max_len;
    const bool quantized = gen() % 3 == 0;

    RandomCase c{acfg::MockTableModel(vocab), {}};
    c.model.set_default_row(random_row(gen, vsize, quantized));
    std::vector<std::vector<float>> shared;
    for (int i = 0; i < 3; ++i) shared.push_back(random_row(gen, vsize, quantized));

    std::vector<TokenId> neighbours;
    for (std::size_t t = 0; t < vsize; ++t) neighbours.push_back(static_cast<TokenId>(t));
    for (std::size_t pos = 0; pos < len; ++pos)
    {
        for (TokenId left : neighbours)
        {
            for (TokenId self : neighbours)
            {
                for (TokenId right : neighbours)
                {
                    if (gen() % 2) continue;
                    const TokenId l = pos == 0 ? acfg::MockTableModel::kBos : left;
                    const TokenId r = pos + 1 == len ? acfg::MockTableModel::kEos : right;
                    auto row = gen() % 4 == 0 ? shared[gen() % shared.size()] : random_row(gen, vsize, quantized);
                    c.model.set_context({pos, l, self, r}, std::move(row));
                }
            }
        }
    }

    const double p_mask = static_cast<double>(gen() % 100) / 100.0;
    c.seq.prompt_len = gen() % (len + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t j = 0; j < len; ++j)
    {
        TokenId id;
        if (j >= c.seq.prompt_len && u(gen) < p_mask)
            id = mask;
        else
            do id = static_cast<TokenId>(gen() % vsize);
            while (id == mask);
        c.seq.ids.push_back(id);
    }
    return c;
}

namespace oracle
{
inline std::vector<double> softmax(std::span<const float> row)
{
    double top = row[0];
    for (float v : row) top = std::max(top, static_cast<double>(v));
    std::vector<double> out;
    double total = 0.0;
    for (float v : row)
    {
        out.push_back(std::exp(static_cast<double>(v) - top));
        total += out.back();
    }
    for (auto& p : out) p /= total;
    return out;
}

/// Full sort on (score, position), first `count`, reported ascending.
template <class Score>
std::vector<std::size_t> lowest(std::vector<std::pair<Score, std::size_t>> entries, std::size_t count)
{
    std::sort(entries.begin(), entries.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(entries[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

/// ceil(percent * n / 100) in integers.
inline std::size_t ceil_percent(std::size_t percent, std::size_t n) { return (percent * n + 99) / 100; }

struct StepReference
{
    LogitMatrix guided;
    std::vector<std::size_t> remasked;
    TokenSeq uncond_input;
};

/**
 * Straight-line adaptive guidance step: max-softmax confidence over visible
 * tokens, ceil(rho * n) lowest re-masked, then
 * uncond + (w + 1) * (cond - uncond) elementwise. rho is given in percent.
 */
template <class M>
StepReference acfg_step(M& model, const TokenSeq& seq, std::size_t rho_percent, double w)
{
    const TokenId mask = model.vocab().mask_id;
    const LogitMatrix cond = model.logits(seq);

    std::vector<std::pair<double, std::size_t>> conf;
    for (std::size_t j = 0; j < seq.size(); ++j)
    {
        if (seq.ids[j] == mask) continue;
        const auto p = softmax(cond.row(j));
        conf.push_back({*std::max_element(p.begin(), p.end()), j});
    }

    StepReference ref;
    const std::size_t n_remask = conf.empty() ? 0 : std::min(ceil_percent(rho_percent, conf.size()), conf.size());
    ref.remasked = lowest(conf, n_remask);
    ref.uncond_input = seq;
    for (auto j : ref.remasked) ref.uncond_input.ids[j] = mask;

    const LogitMatrix uncond = n_remask > 0 ? model.logits(ref.uncond_input) : cond;
    ref.guided = LogitMatrix(cond.rows(), cond.cols());
    const float scale = static_cast<float>(w + 1.0);
    for (std::size_t r = 0; r < cond.rows(); ++r)
        for (std::size_t c = 0; c < cond.cols(); ++c)
            ref.guided(r, c) = uncond(r, c) + scale * (cond(r, c) - uncond(r, c));
    return ref;
}
}  // namespace oracle

/// Scratch directory removed on destruction.
class TempDir
{
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("acfg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace acfg_test
