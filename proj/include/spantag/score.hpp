#pragma once

// Span-level micro precision/recall/F1 with proportional character overlap.
//
//   P = (1/|S|) sum_{s in S} sum_{t in T, same snippet} overlap(s, t) / |s|
//   R = (1/|T|) sum_{t in T} sum_{s in S, same snippet} overlap(s, t) / |t|
//   F1 = 2PR / (P + R)
//
// overlap counts shared characters and is zero across techniques. Both sets
// empty scores 1 everywhere; exactly one side empty scores 0.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spantag/corpus.hpp"
#include "spantag/tagger.hpp"

namespace spantag {

inline std::int64_t span_overlap(const TechniqueSpan& s, const TechniqueSpan& t) {
  if (s.technique != t.technique) return 0;
  return std::max<std::int64_t>(0, std::min(s.end, t.end) - std::max(s.start, t.start));
}

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ScoreReport {
  double precision = 0.0;
  double recall = 0.0;
  double micro_f1 = 0.0;
  std::size_t predicted_spans = 0;
  std::size_t gold_spans = 0;
  std::map<std::string, PRF> per_technique;

  json to_json() const {
    json per = json::object();
    for (const auto& [name, v] : per_technique)
      per[name] = {{"precision", v.precision}, {"recall", v.recall}, {"f1", v.f1}};
    return {{"precision", precision},
            {"recall", recall},
            {"micro_f1", micro_f1},
            {"micro_f1_x100", micro_f1 * 100.0},
            {"predicted_spans", predicted_spans},
            {"gold_spans", gold_spans},
            {"per_technique", per}};
  }

  std::string render() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "Micro F1: %.2f  (P %.2f, R %.2f; %zu predicted, %zu gold spans)\n",
                  micro_f1 * 100.0, precision * 100.0, recall * 100.0, predicted_spans, gold_spans);
    std::string out = buf;
    if (per_technique.empty()) return out;
    std::size_t wide = 9;
    for (const auto& [name, v] : per_technique) wide = std::max(wide, name.size());
    std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s\n", static_cast<int>(wide), "technique", "P", "R", "F1");
    out += buf;
    for (const auto& [name, v] : per_technique) {
      std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f\n", static_cast<int>(wide), name.c_str(),
                    v.precision * 100.0, v.recall * 100.0, v.f1 * 100.0);
      out += buf;
    }
    return out;
  }
};

struct ScoreOptions {
  // Cap each span's summed overlap ratio at 1 when it overlaps several
  // spans on the other side.
  bool cap_per_span = false;
};

namespace detail {

struct OverlapSums {
  double precision_sum = 0.0;
  double recall_sum = 0.0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

inline double side_sum(const std::vector<TechniqueSpan>& from, const std::vector<TechniqueSpan>& against,
                       std::optional<LabelId> only, bool cap, std::size_t& count) {
  double total = 0.0;
  for (const auto& s : from) {
    if (only && s.technique != *only) continue;
    ++count;
    if (s.length() <= 0) continue;
    double credit = 0.0;
    for (const auto& t : against) {
      if (only && t.technique != *only) continue;
      credit += static_cast<double>(span_overlap(s, t)) / static_cast<double>(s.length());
    }
    total += cap ? std::min(credit, 1.0) : credit;
  }
  return total;
}

inline PRF finish(const OverlapSums& s) {
  PRF r;
  if (s.predicted == 0 && s.gold == 0) return {1.0, 1.0, 1.0};
  r.precision = s.predicted ? s.precision_sum / static_cast<double>(s.predicted) : 0.0;
  r.recall = s.gold ? s.recall_sum / static_cast<double>(s.gold) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

}  // namespace detail

// Predictions for ids absent from gold are an error; gold snippets without a
// prediction record count as predicting nothing.
inline ScoreReport micro_f1(const std::vector<SpanRecord>& gold, const std::vector<SpanRecord>& pred,
                            const LabelSet& labels, const ScoreOptions& options = {}) {
  std::unordered_map<std::string, const SpanRecord*> by_id;
  for (const auto& g : gold) by_id.emplace(g.id, &g);
  std::unordered_map<std::string, const SpanRecord*> pred_by_id;
  for (const auto& p : pred) {
    if (!by_id.count(p.id)) throw DataError("prediction for unknown snippet id '" + p.id + "'");
    if (!pred_by_id.emplace(p.id, &p).second) throw DataError("duplicate prediction for snippet id '" + p.id + "'");
  }
  static const std::vector<TechniqueSpan> kNone;

  auto sums_for = [&](std::optional<LabelId> only) {
    detail::OverlapSums s;
    for (const auto& g : gold) {
      auto it = pred_by_id.find(g.id);
      const auto& p = it == pred_by_id.end() ? kNone : it->second->spans;
      s.precision_sum += detail::side_sum(p, g.spans, only, options.cap_per_span, s.predicted);
      s.recall_sum += detail::side_sum(g.spans, p, only, options.cap_per_span, s.gold);
    }
    return s;
  };

  const detail::OverlapSums all = sums_for(std::nullopt);
  const PRF micro = detail::finish(all);
  ScoreReport report;
  report.precision = micro.precision;
  report.recall = micro.recall;
  report.micro_f1 = micro.f1;
  report.predicted_spans = all.predicted;
  report.gold_spans = all.gold;

  std::vector<bool> present(labels.size(), false);
  for (const auto& g : gold)
    for (const auto& s : g.spans) present.at(s.technique) = true;
  for (const auto& p : pred)
    for (const auto& s : p.spans) present.at(s.technique) = true;
  for (LabelId t = 1; t < labels.size(); ++t)
    if (present[t]) report.per_technique[labels.name(t)] = detail::finish(sums_for(t));
  return report;
}

// Table rows in display order with their captions.
inline std::string_view strategy_caption(Strategy s) {
  switch (s) {
    case Strategy::TokenToToken: return "Token-to-Token";
    case Strategy::TokenToWordMajority: return "Token-to-Word (Majority-Label)";
    case Strategy::TokenToWordFirst: return "Token-to-Word (First-Label)";
    case Strategy::WordToWord: return "Word-to-Word";
  }
  return "";
}

// Micro-F1 in [0, 1] per (strategy, use_genre) cell.
using AblationCells = std::map<std::pair<Strategy, bool>, double>;

// Markdown grid of micro-F1 x 100. Only strategies and genre settings that
// occur in `cells` get a row or column; missing cells print as an em dash
// and every column maximum is bolded.
inline std::string ablation_table(const AblationCells& cells) {
  std::vector<Strategy> rows;
  for (Strategy s : kAllStrategies)
    if (cells.count({s, true}) || cells.count({s, false})) rows.push_back(s);
  std::vector<bool> cols;
  for (bool g : {true, false})
    for (Strategy s : rows)
      if (cells.count({s, g})) {
        cols.push_back(g);
        break;
      }
  std::map<bool, std::string> col_max;
  char buf[32];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return std::string(buf);
  };
  for (bool g : cols) {
    std::optional<double> best;
    for (Strategy s : rows)
      if (auto it = cells.find({s, g}); it != cells.end() && (!best || it->second > *best)) best = it->second;
    col_max[g] = fmt(*best);
  }

  std::string out = "| Approach |";
  for (bool g : cols) out += g ? " with Genre |" : " without Genre |";
  out += "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) out += "---|";
  out += "\n";
  for (Strategy s : rows) {
    out += "| " + std::string(strategy_caption(s)) + " |";
    for (bool g : cols) {
      auto it = cells.find({s, g});
      if (it == cells.end()) {
        out += " — |";
        continue;
      }
      const std::string v = fmt(it->second);
      out += v == col_max[g] ? " **" + v + "** |" : " " + v + " |";
    }
    out += "\n";
  }
  return out;
}

inline std::string ablation_table(const std::map<std::pair<Strategy, bool>, ScoreReport>& results) {
  AblationCells cells;
  for (const auto& [key, report] : results) cells[key] = report.micro_f1;
  return ablation_table(cells);
}

}  // namespace spantag
