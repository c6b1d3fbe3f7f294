#pragma once

// JSON/CSV emitters for every artifact the CLI writes. Each artifact starts
// with a provenance block; nothing time-dependent goes into it so identical
// configs produce byte-identical files.

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clens/concept_dictionary.hpp"
#include "clens/digest.hpp"
#include "clens/grounding.hpp"
#include "clens/matching.hpp"
#include "clens/pca.hpp"
#include "clens/shift_analysis.hpp"
#include "clens/steering.hpp"
#include "clens/tensor_store.hpp"

namespace clens {

inline constexpr const char* kToolVersion = "0.1.0";

struct Provenance {
  std::string command;
  Json config = Json::object();        // effective parameters
  std::vector<std::string> defaulted;  // parameters left at their defaults
  std::uint64_t seed = 0;

  std::string config_digest() const {
    Json j = {{"command", command}, {"config", config}};
    return digest_hex(j.dump());
  }

  Json to_json() const {
    return Json{{"tool", "clens"},
                {"version", kToolVersion},
                {"command", command},
                {"config_digest", config_digest()},
                {"seed", seed},
                {"config", config},
                {"defaults_used", defaulted}};
  }
};

inline Json with_provenance(const Provenance& p, const Json& body) {
  Json out;
  out["provenance"] = p.to_json();
  for (auto it = body.begin(); it != body.end(); ++it) out[it.key()] = it.value();
  return out;
}

namespace report_detail {

inline Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline std::string csv_number(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace report_detail

inline Json groundings_json(const std::vector<TextGrounding>& text, const std::vector<ImageGrounding>& images) {
  Json arr = Json::array();
  const std::size_t n = std::max(text.size(), images.size());
  for (std::size_t k = 0; k < n; ++k) {
    Json g;
    g["concept"] = k;
    if (k < text.size()) {
      g["words"] = text[k].words;
      g["logits"] = text[k].logits;
    }
    if (k < images.size()) {
      g["samples"] = images[k].sample_ids;
      g["activations"] = images[k].activations;
    }
    arr.push_back(std::move(g));
  }
  return arr;
}

inline Json matching_json(const Matching& m) {
  Json pairs = Json::array();
  for (std::size_t i = 0; i < m.map.size(); ++i)
    pairs.push_back({{"src", i},
                     {"dst", m.map[i] >= 0 ? Json(m.map[i]) : Json(nullptr)},
                     {"cos", report_detail::finite_or_null(m.similarity[i])}});
  return Json{{"mode", to_string(m.mode)}, {"pairs", pairs}, {"total_cost", m.total_cost}};
}

inline Json recovery_json(const RecoveryReport& r) {
  using report_detail::opt;
  Json records = Json::array();
  for (const auto& rec : r.records) {
    Json j{{"concept", rec.concept_index},
           {"matched", rec.matched >= 0 ? Json(rec.matched) : Json(nullptr)},
           {"consistency", opt(rec.consistency)},
           {"cr", opt(rec.cr)},
           {"cos_tuned_original", rec.cos_tuned_original},
           {"cos_tuned_shifted", rec.cos_tuned_shifted}};
    if (rec.t_overlap_original) j["t_overlap_original"] = *rec.t_overlap_original;
    if (rec.t_overlap_shifted) j["t_overlap_shifted"] = *rec.t_overlap_shifted;
    records.push_back(std::move(j));
  }
  return Json{{"alpha", r.alpha},
              {"records", records},
              {"mean_cos_tuned_shifted", r.mean_cos_tuned_shifted()},
              {"correlation",
               {{"pearson", opt(r.pearson)},
                {"spearman", opt(r.spearman)},
                {"n", r.correlated},
                {"excluded_undefined", r.excluded_undefined}}}};
}

inline std::string recovery_csv(const RecoveryReport& r) {
  using report_detail::csv_number;
  std::ostringstream out;
  out << "alpha,concept,matched,consistency,cr,cos_tuned_original,cos_tuned_shifted,t_overlap_original,"
         "t_overlap_shifted\n";
  for (const auto& rec : r.records) {
    out << csv_number(r.alpha) << ',' << rec.concept_index << ',' << (rec.matched >= 0 ? std::to_string(rec.matched) : "")
        << ',' << csv_number(rec.consistency) << ',' << csv_number(rec.cr) << ','
        << csv_number(rec.cos_tuned_original) << ',' << csv_number(rec.cos_tuned_shifted) << ','
        << csv_number(rec.t_overlap_original) << ',' << csv_number(rec.t_overlap_shifted) << '\n';
  }
  return out.str();
}

inline Json drift_json(const std::vector<DriftPoint>& curve) {
  Json arr = Json::array();
  for (const auto& p : curve) {
    Json j{{"checkpoint", p.checkpoint}, {"matched", p.matched}, {"cosine", p.cosine}, {"mean_cosine", p.mean_cosine}};
    if (p.mean_t_overlap) {
      j["t_overlap"] = p.t_overlap;
      j["mean_t_overlap"] = *p.mean_t_overlap;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

inline Json direction_scores_json(const std::vector<DirectionScore>& scores) {
  Json arr = Json::array();
  for (const auto& s : scores) {
    Json deltas = Json::array();
    for (const auto& [answer, d] : s.top_deltas) deltas.push_back({{"answer", answer}, {"delta", d}});
    arr.push_back({{"vector", s.vector_index},
                   {"id", s.vector_id},
                   {"score", s.score},
                   {"degenerate", s.degenerate},
                   {"primary_answers", s.primary_answers},
                   {"top_deltas", deltas}});
  }
  return arr;
}

inline Json pca_json(const PcaResult& p, const std::vector<std::string>& sample_ids) {
  Json rows = Json::array();
  for (Eigen::Index m = 0; m < p.scores.rows(); ++m) {
    std::vector<double> row(static_cast<std::size_t>(p.scores.cols()));
    for (Eigen::Index c = 0; c < p.scores.cols(); ++c) row[static_cast<std::size_t>(c)] = p.scores(m, c);
    rows.push_back({{"sample", static_cast<std::size_t>(m) < sample_ids.size() ? sample_ids[static_cast<std::size_t>(m)]
                                                                               : std::to_string(m)},
                    {"scores", row}});
  }
  return Json{{"dims", p.scores.cols()}, {"explained_variance_ratio", p.explained_variance_ratio}, {"points", rows}};
}

inline void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), errc::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  require(out.good(), errc::kIo, "write to '" + path.string() + "' failed");
}

}  // namespace clens
