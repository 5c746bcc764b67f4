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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acfg/error.hpp"

namespace acfg
{
using TokenId = std::int32_t;

/**
 * Dense token vocabulary. Ids run over [0, size); one of them is the
 * [MASK] token. Display strings are optional and only used for rendering.
 */
struct Vocab
{
    std::size_t size = 0;
    TokenId mask_id = 0;
    std::vector<std::string> token_strings;

    Vocab() = default;
    Vocab(std::size_t size_, TokenId mask_id_, std::vector<std::string> strings = {})
        : size(size_), mask_id(mask_id_), token_strings(std::move(strings))
    {
        validate();
    }

    /// Builds a vocabulary from display strings; `mask` must be one of them.
    static Vocab from_strings(std::vector<std::string> strings, const std::string& mask)
    {
        for (std::size_t i = 0; i < strings.size(); ++i)
        {
            if (strings[i] == mask)
            {
                const auto n = strings.size();
                return Vocab(n, static_cast<TokenId>(i), std::move(strings));
            }
        }
        throw InvalidConfig("vocab: mask string '" + mask + "' not present");
    }

    void validate() const
    {
        if (size == 0) throw InvalidConfig("vocab: size must be positive");
        if (mask_id < 0 || static_cast<std::size_t>(mask_id) >= size)
            throw InvalidConfig("vocab: mask_id out of range");
        if (!token_strings.empty() && token_strings.size() != size)
            throw InvalidConfig("vocab: token_strings must have exactly `size` entries");
    }

    bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size; }

    std::string token_string(TokenId id) const
    {
        if (!token_strings.empty() && contains(id)) return token_strings[static_cast<std::size_t>(id)];
        return std::to_string(id);
    }

    std::optional<TokenId> id_of(const std::string& s) const
    {
        for (std::size_t i = 0; i < token_strings.size(); ++i)
            if (token_strings[i] == s) return static_cast<TokenId>(i);
        return std::nullopt;
    }

    /// Same id space: size and [MASK] id agree. Display strings may differ.
    bool compatible(const Vocab& other) const { return size == other.size && mask_id == other.mask_id; }

    bool operator==(const Vocab&) const = default;
};

/**
 * A token sequence whose first `prompt_len` positions are the conditioning
 * prompt. The remainder is the generated region.
 */
struct TokenSeq
{
    std::vector<TokenId> ids;
    std::size_t prompt_len = 0;

    std::size_t size() const { return ids.size(); }
    std::size_t gen_len() const { return ids.size() - prompt_len; }

    /// Throws InvalidInput unless every id is in the vocabulary and the prompt fits.
    void validate(const Vocab& vocab) const
    {
        if (prompt_len > ids.size()) throw InvalidInput("token sequence: prompt_len exceeds length");
        for (auto id : ids)
            if (!vocab.contains(id))
                throw InvalidInput("token sequence: id " + std::to_string(id) + " outside vocabulary");
    }

    std::size_t count(TokenId id) const
    {
        std::size_t n = 0;
        for (auto t : ids) n += (t == id);
        return n;
    }

    bool operator==(const TokenSeq&) const = default;
};

/// Row-major matrix of 32-bit scores: one row per position, one column per token.
class LogitMatrix
{
public:
    LogitMatrix() = default;
    LogitMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), values_(rows * cols, fill)
    {
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool same_shape(const LogitMatrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

    float& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    std::span<float> values() { return values_; }
    std::span<const float> values() const { return values_; }

    bool all_finite() const
    {
        for (float v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Largest elementwise absolute difference; infinity on shape mismatch.
    float max_abs_diff(const LogitMatrix& other) const
    {
        if (!same_shape(other)) return INFINITY;
        float worst = 0.0f;
        for (std::size_t i = 0; i < values_.size(); ++i)
            worst = std::max(worst, std::fabs(values_[i] - other.values_[i]));
        return worst;
    }

    /// Exact elementwise equality.
    bool operator==(const LogitMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> values_;
};

/// Same layout as LogitMatrix; each row is a probability distribution.
using ProbMatrix = LogitMatrix;

}  // namespace acfg
