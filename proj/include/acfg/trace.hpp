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
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acfg/decoder.hpp"

namespace acfg
{
/**
 * Dense steps x positions confidence matrix. A position committed at an
 * earlier step repeats the confidence it was committed with, and is flagged
 * as carried.
 */
struct HeatmapData
{
    std::size_t steps = 0;
    std::vector<std::size_t> positions;  ///< absolute sequence positions, ascending
    std::vector<float> confidence;       ///< row-major, steps x positions.size()
    std::vector<std::uint8_t> carried;
    std::vector<double> step_mean;
    std::vector<double> step_min;

    float at(std::size_t step, std::size_t col) const { return confidence[step * positions.size() + col]; }

    void recompute_aggregates()
    {
        step_mean.assign(steps, 0.0);
        step_min.assign(steps, 0.0);
        const std::size_t n = positions.size();
        for (std::size_t s = 0; s < steps; ++s)
        {
            double total = 0.0, low = INFINITY;
            for (std::size_t c = 0; c < n; ++c)
            {
                total += at(s, c);
                low = std::min(low, static_cast<double>(at(s, c)));
            }
            step_mean[s] = n ? total / static_cast<double>(n) : 0.0;
            step_min[s] = n ? low : 0.0;
        }
    }

    bool operator==(const HeatmapData&) const = default;
};

inline HeatmapData build_heatmap(const std::vector<StepTrace>& traces)
{
    if (traces.empty()) throw InvalidInput("heatmap: no traces");
    std::set<std::size_t> all;
    for (const auto& t : traces)
        for (const auto& c : t.candidates) all.insert(c.position);

    HeatmapData h;
    h.steps = traces.size();
    h.positions.assign(all.begin(), all.end());
    h.confidence.assign(h.steps * h.positions.size(), 0.0f);
    h.carried.assign(h.confidence.size(), 0);

    std::map<std::size_t, std::size_t> column;
    for (std::size_t c = 0; c < h.positions.size(); ++c) column[h.positions[c]] = c;
    std::vector<float> last(h.positions.size(), 0.0f);
    std::vector<bool> seen(h.positions.size(), false);
    for (std::size_t s = 0; s < h.steps; ++s)
    {
        std::vector<bool> fresh(h.positions.size(), false);
        for (const auto& c : traces[s].candidates)
        {
            const auto col = column[c.position];
            last[col] = c.confidence;
            seen[col] = fresh[col] = true;
        }
        for (std::size_t col = 0; col < h.positions.size(); ++col)
        {
            if (!seen[col]) throw InvalidInput("heatmap: position traced before it was ever a candidate");
            h.confidence[s * h.positions.size() + col] = last[col];
            h.carried[s * h.positions.size() + col] = fresh[col] ? 0 : 1;
        }
    }
    h.recompute_aggregates();
    return h;
}

/// "heat.csv" -> "heat.agg.csv".
inline std::string aggregates_path_for(const std::string& path)
{
    const auto slash = path.find_last_of('/');
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + ".agg";
    return path.substr(0, dot) + ".agg" + path.substr(dot);
}

namespace detail
{
inline std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

inline std::ifstream open_in(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return in;
}

/// Shortest decimal text that parses back to the same value.
template <class T>
std::string shortest(T v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& s)
{
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw InvalidInput("malformed number '" + s + "'");
    return v;
}

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    return out;
}
}  // namespace detail

/**
 * Writes `step,position,confidence,carried` rows to `path` and
 * `step,mean,min` rows to aggregates_path_for(path). Floats are printed with
 * enough digits to parse back bit-exactly.
 */
inline void export_heatmap(const HeatmapData& h, const std::string& path)
{
    auto out = detail::open_out(path);
    out << "step,position,confidence,carried\n";
    for (std::size_t s = 0; s < h.steps; ++s)
    {
        for (std::size_t c = 0; c < h.positions.size(); ++c)
        {
            out << s << ',' << h.positions[c] << ',' << detail::shortest(h.at(s, c)) << ','
                << int{h.carried[s * h.positions.size() + c]} << '\n';
        }
    }
    if (!out) throw IoError("failed writing '" + path + "'");

    const auto agg_path = aggregates_path_for(path);
    auto agg = detail::open_out(agg_path);
    agg << "step,mean,min\n";
    for (std::size_t s = 0; s < h.steps; ++s)
    {
        agg << s << ',' << detail::shortest(h.step_mean[s]) << ',' << detail::shortest(h.step_min[s]) << '\n';
    }
    if (!agg) throw IoError("failed writing '" + agg_path + "'");
}

inline void export_heatmap(const std::vector<StepTrace>& traces, const std::string& path)
{
    export_heatmap(build_heatmap(traces), path);
}

/// Reads back both files written by export_heatmap.
inline HeatmapData parse_heatmap(const std::string& path)
{
    auto in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != "step,position,confidence,carried")
        throw InvalidInput("heatmap '" + path + "': bad header");

    struct Cell
    {
        float conf;
        std::uint8_t carried;
    };
    std::map<std::pair<std::size_t, std::size_t>, Cell> cells;
    std::set<std::size_t> steps, positions;
    while (std::getline(in, line))
    {
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 4) throw InvalidInput("heatmap '" + path + "': malformed row '" + line + "'");
        const auto s = detail::parse_number<std::size_t>(f[0]);
        const auto p = detail::parse_number<std::size_t>(f[1]);
        cells[{s, p}] = {detail::parse_number<float>(f[2]), static_cast<std::uint8_t>(detail::parse_number<int>(f[3]))};
        steps.insert(s);
        positions.insert(p);
    }

    HeatmapData h;
    h.steps = steps.size();
    h.positions.assign(positions.begin(), positions.end());
    for (std::size_t s = 0; s < h.steps; ++s)
    {
        for (auto p : h.positions)
        {
            auto it = cells.find({s, p});
            if (it == cells.end()) throw InvalidInput("heatmap '" + path + "': matrix is not dense");
            h.confidence.push_back(it->second.conf);
            h.carried.push_back(it->second.carried);
        }
    }

    auto agg = detail::open_in(aggregates_path_for(path));
    if (!std::getline(agg, line) || line != "step,mean,min")
        throw InvalidInput("heatmap aggregates: bad header");
    while (std::getline(agg, line))
    {
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3) throw InvalidInput("heatmap aggregates: malformed row '" + line + "'");
        h.step_mean.push_back(detail::parse_number<double>(f[1]));
        h.step_min.push_back(detail::parse_number<double>(f[2]));
    }
    if (h.step_mean.size() != h.steps) throw InvalidInput("heatmap aggregates: step count mismatch");
    return h;
}

struct RefinementEntry
{
    std::size_t position = 0;
    TokenId token = 0;
    std::size_t commit_step = 0;
    std::size_t remask_events = 0;  ///< steps whose A-CFG unconditional input masked this position

    bool operator==(const RefinementEntry&) const = default;
};

inline std::vector<RefinementEntry> build_refinement(const DecodeResult& result)
{
    std::vector<RefinementEntry> out;
    const auto prompt_len = result.final.prompt_len;
    for (std::size_t i = 0; i < result.commit_step.size(); ++i)
        out.push_back({prompt_len + i, result.final.ids[prompt_len + i], result.commit_step[i], 0});
    for (const auto& t : result.traces)
        for (auto p : t.acfg_remasked)
            if (p >= prompt_len && p - prompt_len < out.size()) ++out[p - prompt_len].remask_events;
    return out;
}

inline nlohmann::json refinement_to_json(const std::vector<RefinementEntry>& entries)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"position", e.position},
                       {"token", e.token},
                       {"commit_step", e.commit_step},
                       {"remask_events", e.remask_events}});
    return arr;
}

inline void export_refinement(const DecodeResult& result, const std::string& path)
{
    auto out = detail::open_out(path);
    out << refinement_to_json(build_refinement(result)).dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<RefinementEntry> parse_refinement(const std::string& path)
{
    auto in = detail::open_in(path);
    try
    {
        nlohmann::json j;
        in >> j;
        std::vector<RefinementEntry> out;
        for (const auto& e : j)
            out.push_back({e.at("position").get<std::size_t>(), e.at("token").get<TokenId>(),
                           e.at("commit_step").get<std::size_t>(), e.at("remask_events").get<std::size_t>()});
        return out;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw InvalidInput("refinement '" + path + "': " + e.what());
    }
}

/// Minimal SVG rendering of the heatmap: one cell per (step, position), darker = more confident.
inline void export_heatmap_svg(const HeatmapData& h, const std::string& path)
{
    constexpr int cell = 18, margin = 40;
    const int width = margin + cell * static_cast<int>(h.positions.size()) + 10;
    const int height = margin + cell * static_cast<int>(h.steps) + 10;
    auto out = detail::open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<text x=\"" << margin << "\" y=\"14\" font-size=\"11\">position</text>\n";
    out << "<text x=\"2\" y=\"" << margin + 12 << "\" font-size=\"11\">step</text>\n";
    char buf[256];
    for (std::size_t s = 0; s < h.steps; ++s)
    {
        for (std::size_t c = 0; c < h.positions.size(); ++c)
        {
            const double v = std::clamp(static_cast<double>(h.at(s, c)), 0.0, 1.0);
            const int shade = static_cast<int>(255.0 * (1.0 - v));
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"rgb(%d,%d,255)\"%s/>\n",
                          margin + cell * static_cast<int>(c), margin + cell * static_cast<int>(s), cell, cell, shade,
                          shade, h.carried[s * h.positions.size() + c] ? " fill-opacity=\"0.35\"" : "");
            out << buf;
        }
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace acfg
