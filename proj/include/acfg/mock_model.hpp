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
#include <compare>
#include <map>
#include <vector>

#include "acfg/model.hpp"

namespace acfg
{
/**
 * Table-driven test double.
 *
 * Lookup order for a sequence: an exact whole-sequence entry, else per row a
 * (position, left, self, right) context entry, else the default row. Left and
 * right neighbours outside the sequence read as kBos / kEos.
 */
class MockTableModel
{
public:
    static constexpr TokenId kBos = -1;
    static constexpr TokenId kEos = -2;

    struct ContextKey
    {
        std::size_t position;
        TokenId left;
        TokenId self;
        TokenId right;

        auto operator<=>(const ContextKey&) const = default;
    };

    explicit MockTableModel(Vocab vocab) : vocab_(std::move(vocab)), default_row_(vocab_.size, 0.0f)
    {
        vocab_.validate();
    }

    const Vocab& vocab() const { return vocab_; }

    void set_default_row(std::vector<float> row)
    {
        check_row(row);
        default_row_ = std::move(row);
    }

    void set_sequence(std::vector<TokenId> ids, LogitMatrix logits)
    {
        if (logits.rows() != ids.size() || logits.cols() != vocab_.size || !logits.all_finite())
            throw InvalidInput("mock model: sequence entry has the wrong shape or non-finite values");
        sequence_rows_[std::move(ids)] = std::move(logits);
    }

    void set_context(const ContextKey& key, std::vector<float> row)
    {
        check_row(row);
        context_rows_[key] = std::move(row);
    }

    static ContextKey context_of(const TokenSeq& seq, std::size_t j)
    {
        return {j, j == 0 ? kBos : seq.ids[j - 1], seq.ids[j], j + 1 < seq.size() ? seq.ids[j + 1] : kEos};
    }

    LogitMatrix logits(const TokenSeq& seq) const
    {
        if (auto it = sequence_rows_.find(seq.ids); it != sequence_rows_.end()) return it->second;

        LogitMatrix out(seq.size(), vocab_.size);
        for (std::size_t j = 0; j < seq.size(); ++j)
        {
            const std::vector<float>* row = &default_row_;
            if (auto it = context_rows_.find(context_of(seq, j)); it != context_rows_.end()) row = &it->second;
            std::copy(row->begin(), row->end(), out.row(j).begin());
        }
        return out;
    }

private:
    void check_row(const std::vector<float>& row) const
    {
        if (row.size() != vocab_.size) throw InvalidInput("mock model: row width differs from vocab size");
        for (float v : row)
            if (!std::isfinite(v)) throw InvalidInput("mock model: non-finite logit");
    }

    Vocab vocab_;
    std::vector<float> default_row_;
    std::map<std::vector<TokenId>, LogitMatrix> sequence_rows_;
    std::map<ContextKey, std::vector<float>> context_rows_;
};

}  // namespace acfg
