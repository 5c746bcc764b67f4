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
#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "acfg/rng.hpp"
#include "acfg/types.hpp"

namespace acfg
{
/// One task instance: a prompt and the reference completion of the generated region.
struct Instance
{
    TokenSeq prompt;
    std::vector<TokenId> answer;

    bool operator==(const Instance&) const = default;
};

/**
 * A synthetic task with exactly checkable answers. Instances are enumerated
 * by a code in [0, distinct_instances); sampling distinct codes gives
 * disjoint splits for free.
 */
struct TaskSpec
{
    std::string name;
    Vocab vocab;
    std::size_t prompt_len = 0;
    std::size_t answer_len = 0;
    std::uint64_t distinct_instances = 0;
    std::function<Instance(std::uint64_t code)> instance_at;
    /// Exact-match predicate over the generated region.
    std::function<bool(const Instance&, std::span<const TokenId>)> check;
    /// Turns whitespace-separated prompt symbols into a prompt sequence.
    std::function<TokenSeq(const std::string&)> render_prompt;
};

struct TaskParams
{
    std::size_t length = 8;    ///< copy / sort: prompt symbols
    std::size_t alphabet = 0;  ///< copy / sort: symbol count (0 = task default)
    std::size_t digits = 2;    ///< mod_add: digits per operand
    std::size_t base = 10;     ///< mod_add
    std::size_t clues = 7;     ///< sudoku4: given cells
};

inline std::string render_tokens(const Vocab& vocab, std::span<const TokenId> ids)
{
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i)
    {
        if (i) out += ' ';
        out += vocab.token_string(ids[i]);
    }
    return out;
}

namespace detail
{
inline std::vector<std::string> symbol_names(std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i)
    {
        if (i < 26)
            out.emplace_back(1, static_cast<char>('a' + i));
        else
            out.push_back("s" + std::to_string(i));
    }
    return out;
}

inline std::uint64_t saturating_pow(std::uint64_t base, std::size_t exp)
{
    std::uint64_t out = 1;
    for (std::size_t i = 0; i < exp; ++i)
    {
        if (out > UINT64_MAX / base) return UINT64_MAX;
        out *= base;
    }
    return out;
}

/// Parses "x y z" against the vocabulary and appends the `=` separator.
inline TokenSeq parse_symbols(const Vocab& vocab, const std::string& text, std::size_t expected,
                              const std::string& task)
{
    std::istringstream in(text);
    TokenSeq seq;
    std::string word;
    while (in >> word)
    {
        auto id = vocab.id_of(word);
        if (!id || *id == vocab.mask_id || word == "=")
            throw InvalidInput(task + ": unknown prompt symbol '" + word + "'");
        seq.ids.push_back(*id);
    }
    if (seq.ids.size() != expected)
        throw InvalidInput(task + ": expected " + std::to_string(expected) + " prompt symbols, got " +
                           std::to_string(seq.ids.size()));
    seq.ids.push_back(*vocab.id_of("="));
    seq.prompt_len = seq.ids.size();
    return seq;
}

inline bool exact(const Instance& inst, std::span<const TokenId> generated)
{
    return std::equal(inst.answer.begin(), inst.answer.end(), generated.begin(), generated.end());
}
}  // namespace detail

/// copy: prompt holds `length` symbols, the answer repeats them.
inline TaskSpec make_copy_task(std::size_t length = 8, std::size_t alphabet = 4)
{
    if (length < 1 || alphabet < 1) throw InvalidConfig("copy: length and alphabet must be >= 1");
    auto strings = detail::symbol_names(alphabet);
    strings.insert(strings.begin(), {"[MASK]", "="});
    TaskSpec t;
    t.name = "copy";
    t.vocab = Vocab::from_strings(strings, "[MASK]");
    t.prompt_len = length + 1;
    t.answer_len = length;
    t.distinct_instances = detail::saturating_pow(alphabet, length);
    t.instance_at = [length, alphabet](std::uint64_t code) {
        Instance inst;
        for (std::size_t i = 0; i < length; ++i)
        {
            inst.answer.push_back(static_cast<TokenId>(2 + code % alphabet));
            code /= alphabet;
        }
        inst.prompt.ids = inst.answer;
        inst.prompt.ids.push_back(1);
        inst.prompt.prompt_len = inst.prompt.ids.size();
        return inst;
    };
    t.check = detail::exact;
    t.render_prompt = [vocab = t.vocab, length](const std::string& text) {
        return detail::parse_symbols(vocab, text, length, "copy");
    };
    return t;
}

/// sort: prompt holds `length` distinct symbols out of `alphabet`; the answer lists them in order.
inline TaskSpec make_sort_task(std::size_t length = 8, std::size_t alphabet = 0)
{
    if (alphabet == 0) alphabet = length;
    if (length < 1 || alphabet < length) throw InvalidConfig("sort: need 1 <= length <= alphabet");
    auto strings = detail::symbol_names(alphabet);
    strings.insert(strings.begin(), {"[MASK]", "="});
    TaskSpec t;
    t.name = "sort";
    t.vocab = Vocab::from_strings(strings, "[MASK]");
    t.prompt_len = length + 1;
    t.answer_len = length;
    t.distinct_instances = 1;
    for (std::size_t i = 0; i < length; ++i)
        t.distinct_instances = t.distinct_instances > UINT64_MAX / (alphabet - i)
                                   ? UINT64_MAX
                                   : t.distinct_instances * (alphabet - i);
    t.instance_at = [length, alphabet](std::uint64_t code) {
        std::vector<TokenId> pool(alphabet);
        std::iota(pool.begin(), pool.end(), TokenId{2});
        Instance inst;
        for (std::size_t i = 0; i < length; ++i)
        {
            const auto left = alphabet - i;
            const auto pick = static_cast<std::ptrdiff_t>(code % left);
            code /= left;
            inst.prompt.ids.push_back(pool[static_cast<std::size_t>(pick)]);
            pool.erase(pool.begin() + pick);
        }
        inst.answer = inst.prompt.ids;
        std::sort(inst.answer.begin(), inst.answer.end());
        inst.prompt.ids.push_back(1);
        inst.prompt.prompt_len = inst.prompt.ids.size();
        return inst;
    };
    t.check = detail::exact;
    t.render_prompt = [vocab = t.vocab, length](const std::string& text) {
        return detail::parse_symbols(vocab, text, length, "sort");
    };
    return t;
}

/// mod_add: prompt "a + b =" with `digits`-digit operands; answer (a + b) mod base^digits.
inline TaskSpec make_mod_add_task(std::size_t digits = 2, std::size_t base = 10)
{
    if (digits < 1 || base < 2 || base > 36) throw InvalidConfig("mod_add: need digits >= 1 and 2 <= base <= 36");
    std::vector<std::string> strings{"[MASK]", "=", "+"};
    for (std::size_t d = 0; d < base; ++d)
        strings.emplace_back(1, d < 10 ? static_cast<char>('0' + d) : static_cast<char>('a' + d - 10));
    TaskSpec t;
    t.name = "mod_add";
    t.vocab = Vocab::from_strings(strings, "[MASK]");
    t.prompt_len = 2 * digits + 2;
    t.answer_len = digits;
    const std::uint64_t modulus = detail::saturating_pow(base, digits);
    if (modulus == UINT64_MAX || modulus > UINT32_MAX) throw InvalidConfig("mod_add: operand space too large");
    t.distinct_instances = modulus * modulus;
    auto put = [digits, base](std::vector<TokenId>& out, std::uint64_t value) {
        std::vector<TokenId> ds(digits);
        for (std::size_t i = digits; i-- > 0;)
        {
            ds[i] = static_cast<TokenId>(3 + value % base);
            value /= base;
        }
        out.insert(out.end(), ds.begin(), ds.end());
    };
    t.instance_at = [modulus, put](std::uint64_t code) {
        const auto a = code / modulus;
        const auto b = code % modulus;
        Instance inst;
        put(inst.prompt.ids, a);
        inst.prompt.ids.push_back(2);
        put(inst.prompt.ids, b);
        inst.prompt.ids.push_back(1);
        inst.prompt.prompt_len = inst.prompt.ids.size();
        put(inst.answer, (a + b) % modulus);
        return inst;
    };
    t.check = detail::exact;
    t.render_prompt = [vocab = t.vocab, digits](const std::string& text) {
        std::istringstream in(text);
        std::string a, plus, b;
        in >> a >> plus >> b;
        if (plus != "+" || a.size() != digits || b.size() != digits)
            throw InvalidInput("mod_add: prompt must look like '" + std::string(digits, '1') + " + " +
                               std::string(digits, '2') + "'");
        TokenSeq seq;
        auto digits_of = [&](const std::string& operand) {
            for (char c : operand)
            {
                auto id = vocab.id_of(std::string(1, c));
                if (!id || *id < 3) throw InvalidInput("mod_add: unknown digit '" + std::string(1, c) + "'");
                seq.ids.push_back(*id);
            }
        };
        digits_of(a);
        seq.ids.push_back(2);
        digits_of(b);
        seq.ids.push_back(1);
        seq.prompt_len = seq.ids.size();
        return seq;
    };
    return t;
}

/// 4x4 sudoku: rows, columns and 2x2 boxes each hold 1..4 once.
namespace sudoku4
{
using Grid = std::array<std::uint8_t, 16>;  ///< cell values 1..4, 0 = blank

inline constexpr std::size_t box_of(std::size_t cell) { return (cell / 8) * 2 + (cell % 4) / 2; }

inline bool placeable(const Grid& g, std::size_t cell, std::uint8_t v)
{
    for (std::size_t o = 0; o < 16; ++o)
    {
        if (o == cell || g[o] != v) continue;
        if (o / 4 == cell / 4 || o % 4 == cell % 4 || box_of(o) == box_of(cell)) return false;
    }
    return true;
}

/// Backtracking solver; stops after `limit` solutions. Solutions are appended to `out` if given.
inline std::size_t solve(Grid g, std::size_t limit = 2, std::vector<Grid>* out = nullptr)
{
    std::size_t found = 0;
    std::function<void(std::size_t)> rec = [&](std::size_t cell) {
        if (found >= limit) return;
        while (cell < 16 && g[cell] != 0) ++cell;
        if (cell == 16)
        {
            ++found;
            if (out) out->push_back(g);
            return;
        }
        for (std::uint8_t v = 1; v <= 4; ++v)
        {
            if (!placeable(g, cell, v)) continue;
            g[cell] = v;
            rec(cell + 1);
            g[cell] = 0;
        }
    };
    for (std::size_t c = 0; c < 16; ++c)
        if (g[c] != 0 && !placeable(g, c, g[c])) return 0;
    rec(0);
    return found;
}

inline bool is_solution(const Grid& g)
{
    for (std::size_t c = 0; c < 16; ++c)
        if (g[c] < 1 || g[c] > 4 || !placeable(g, c, g[c])) return false;
    return true;
}

/// All 288 complete grids, in lexicographic order.
inline const std::vector<Grid>& all_grids()
{
    static const std::vector<Grid> grids = [] {
        std::vector<Grid> out;
        solve(Grid{}, SIZE_MAX, &out);
        return out;
    }();
    return grids;
}

/**
 * For each complete grid, the clue masks (bit i = cell i given) with exactly
 * `clues` bits that pin the grid down uniquely. A mask is ambiguous iff it is
 * a subset of the agreement mask with some other grid.
 */
inline const std::vector<std::vector<std::uint16_t>>& unique_masks(std::size_t clues)
{
    static std::mutex mu;
    static std::map<std::size_t, std::vector<std::vector<std::uint16_t>>> cache;
    std::lock_guard lock(mu);
    if (auto it = cache.find(clues); it != cache.end()) return it->second;

    const auto& grids = all_grids();
    std::vector<std::vector<std::uint16_t>> per_grid(grids.size());
    std::vector<std::uint8_t> ambiguous(1u << 16);
    for (std::size_t g = 0; g < grids.size(); ++g)
    {
        std::fill(ambiguous.begin(), ambiguous.end(), 0);
        for (std::size_t h = 0; h < grids.size(); ++h)
        {
            if (h == g) continue;
            std::uint32_t agree = 0;
            for (std::size_t c = 0; c < 16; ++c)
                if (grids[g][c] == grids[h][c]) agree |= 1u << c;
            ambiguous[agree] = 1;
        }
        for (std::uint32_t bit = 1; bit < (1u << 16); bit <<= 1)
            for (std::uint32_t s = 0; s < (1u << 16); ++s)
                if ((s & bit) && ambiguous[s]) ambiguous[s ^ bit] = 1;
        for (std::uint32_t s = 0; s < (1u << 16); ++s)
            if (!ambiguous[s] && static_cast<std::size_t>(std::popcount(s)) == clues)
                per_grid[g].push_back(static_cast<std::uint16_t>(s));
    }
    return cache.emplace(clues, std::move(per_grid)).first->second;
}
}  // namespace sudoku4

/**
 * sudoku4: the prompt is a 16-cell 4x4 grid ("_" for blanks) followed by
 * "="; the answer is the completed grid. Every puzzle has exactly `clues`
 * givens and a unique completion.
 */
inline TaskSpec make_sudoku4_task(std::size_t clues = 7)
{
    if (clues > 16) throw InvalidConfig("sudoku4: at most 16 clues");
    TaskSpec t;
    t.name = "sudoku4";
    t.vocab = Vocab::from_strings({"[MASK]", "=", "_", "1", "2", "3", "4"}, "[MASK]");
    t.prompt_len = 17;
    t.answer_len = 16;

    const auto& masks = sudoku4::unique_masks(clues);
    auto offsets = std::make_shared<std::vector<std::uint64_t>>();
    std::uint64_t total = 0;
    for (const auto& m : masks)
    {
        offsets->push_back(total);
        total += m.size();
    }
    t.distinct_instances = total;
    t.instance_at = [clues, offsets](std::uint64_t code) {
        const auto& masks = sudoku4::unique_masks(clues);
        const auto g = static_cast<std::size_t>(std::upper_bound(offsets->begin(), offsets->end(), code) -
                                                offsets->begin() - 1);
        const std::uint16_t mask = masks[g][code - (*offsets)[g]];
        const auto& grid = sudoku4::all_grids()[g];
        Instance inst;
        for (std::size_t c = 0; c < 16; ++c)
        {
            inst.prompt.ids.push_back((mask >> c) & 1u ? static_cast<TokenId>(2 + grid[c]) : TokenId{2});
            inst.answer.push_back(static_cast<TokenId>(2 + grid[c]));
        }
        inst.prompt.ids.push_back(1);
        inst.prompt.prompt_len = inst.prompt.ids.size();
        return inst;
    };
    // A valid grid that keeps every given. For unique puzzles this is exact match.
    t.check = [](const Instance& inst, std::span<const TokenId> generated) {
        if (generated.size() != 16) return false;
        sudoku4::Grid g{};
        for (std::size_t c = 0; c < 16; ++c)
        {
            const auto v = generated[c] - 2;
            if (v < 1 || v > 4) return false;
            g[c] = static_cast<std::uint8_t>(v);
            if (inst.prompt.ids[c] != 2 && inst.prompt.ids[c] != generated[c]) return false;
        }
        return sudoku4::is_solution(g);
    };
    t.render_prompt = [vocab = t.vocab](const std::string& text) {
        return detail::parse_symbols(vocab, text, 16, "sudoku4");
    };
    return t;
}

inline TaskSpec make_task(const std::string& name, const TaskParams& p = {})
{
    if (name == "copy") return make_copy_task(p.length, p.alphabet == 0 ? 4 : p.alphabet);
    if (name == "sort") return make_sort_task(p.length, p.alphabet);
    if (name == "mod_add") return make_mod_add_task(p.digits, p.base);
    if (name == "sudoku4") return make_sudoku4_task(p.clues);
    throw InvalidConfig("unknown task '" + name + "' (expected copy, sort, mod_add or sudoku4)");
}

struct Dataset
{
    std::vector<Instance> train;
    std::vector<Instance> eval;
};

/// Draws n_train + n_eval distinct instances; the two splits never overlap.
inline Dataset generate_dataset(const TaskSpec& task, std::size_t n_train, std::size_t n_eval, std::uint64_t seed)
{
    if (n_eval < 1) throw InvalidInput("generate_dataset: need at least one eval instance");
    const std::uint64_t total = n_train + n_eval;
    if (total > task.distinct_instances)
        throw InvalidInput("generate_dataset: " + std::to_string(total) + " instances requested but task '" +
                           task.name + "' has only " + std::to_string(task.distinct_instances));

    rng::Stream stream(rng::mix(seed, 0x64617461));
    std::vector<std::uint64_t> codes;
    codes.reserve(total);
    if (total * 2 >= task.distinct_instances)
    {
        std::vector<std::uint64_t> all(task.distinct_instances);
        std::iota(all.begin(), all.end(), std::uint64_t{0});
        for (std::uint64_t i = 0; i < total; ++i)
        {
            const auto j = i + stream.below(all.size() - i);
            std::swap(all[i], all[j]);
            codes.push_back(all[i]);
        }
    }
    else
    {
        std::unordered_set<std::uint64_t> seen;
        while (codes.size() < total)
        {
            const auto c = stream.below(task.distinct_instances);
            if (seen.insert(c).second) codes.push_back(c);
        }
    }

    Dataset out;
    for (std::uint64_t i = 0; i < total; ++i)
        (i < n_train ? out.train : out.eval).push_back(task.instance_at(codes[i]));
    return out;
}

/// Full sequences (prompt ++ answer) for training.
inline std::vector<TokenSeq> training_corpus(std::span<const Instance> instances)
{
    std::vector<TokenSeq> out;
    out.reserve(instances.size());
    for (const auto& inst : instances)
    {
        TokenSeq s = inst.prompt;
        s.ids.insert(s.ids.end(), inst.answer.begin(), inst.answer.end());
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace acfg
