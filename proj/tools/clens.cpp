#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clens/clens.hpp"

namespace {

using namespace clens;

struct Options {
  std::string manifest;
  std::string manifest_b;
  std::vector<std::string> checkpoints;
  int k = 20;
  std::uint64_t seed = 0;
  int n_grounding = kDefaultNGrounding;
  int n_mas = kDefaultNMas;
  int n_init = 10;
  int max_iter = 300;
  double alpha = kDefaultAlpha;
  std::string alpha_sweep;
  std::string k_sweep;
  int layer = -1;  // -1: take it from the manifest
  std::string match_mode = "bijective";
  std::string out = "clens_out";

  // fixtures
  FixtureSpec fixture;
  // steer
  std::string vector_path;
  std::string counts_path;
  int top_n = 10;
  std::string apply_to = "all_tokens";
  // eval
  std::string captions, before, after, responses, refusals, baseline, steered;
  std::vector<std::string> lexicon_files;
  // pca
  int dims = 2;
};

std::vector<double> parse_doubles(const std::string& list, const char* what) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == item.size() && !item.empty(), errc::kInvalidArgument,
            std::string("bad ") + what + " entry '" + item + "'");
    require(std::isfinite(v), errc::kNonFinite, std::string(what) + " entries must be finite");
    out.push_back(v);
  }
  require(!out.empty(), errc::kInvalidArgument, std::string(what) + " is empty");
  return out;
}

std::string number_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return fs::path(o.out);
}

Bundle load_required(const std::string& path, const char* flag) {
  require(!path.empty(), errc::kInvalidArgument, std::string(flag) + " is required");
  return load_bundle(path);
}

ConceptDictionary fit(const Bundle& b, const Options& o, int k) {
  KMeansOptions km;
  km.k = k;
  km.seed = o.seed;
  km.n_init = o.n_init;
  km.max_iter = o.max_iter;
  FitResult r = fit_dictionary(b.states, km);
  r.dictionary.source.manifest_digest = b.manifest.digest();
  return std::move(r.dictionary);
}

const Unembedding* unembedding_of(const Bundle& b) { return b.unembedding ? &*b.unembedding : nullptr; }

int layer_of(const Options& o, const HiddenStates& h) { return o.layer >= 0 ? o.layer : h.layer; }

// --------------------------------------------------------------------------

class Runner {
 public:
  Runner(const Options& o, const CLI::App& app) : o_(o), app_(app) {}

  Provenance provenance(const std::string& command, Json config) const {
    Provenance p;
    p.command = command;
    p.seed = o_.seed;
    config["seed"] = o_.seed;
    p.config = std::move(config);
    for (const char* name : {"--k", "--seed", "--n-grounding", "--n-mas", "--alpha", "--match-mode", "--layer"})
      if (app_.get_option(name)->count() == 0) p.defaulted.emplace_back(name + 2);
    return p;
  }

  void emit(const Provenance& p, const Json& body, const fs::path& path) const {
    write_json(with_provenance(p, body), path);
    std::cout << path.string() << '\n';
  }

  void fixtures() const {
    const FixturePaths paths = write_fixtures(out_dir(o_), o_.fixture);
    Json body{{"original", paths.original.string()},
              {"finetuned", paths.finetuned.string()},
              {"truth", paths.truth.string()}};
    Json cps = Json::array();
    for (const auto& c : paths.checkpoints) cps.push_back(c.string());
    body["checkpoints"] = cps;
    Provenance p = provenance("fixtures", o_.fixture.to_json());
    emit(p, body, fs::path(o_.out) / "fixtures.json");
  }

  void concepts() const {
    const Bundle b = load_required(o_.manifest, "--manifest");
    KMeansOptions km{o_.k, o_.seed, o_.max_iter, o_.n_init};
    FitResult r = fit_dictionary(b.states, km);
    r.dictionary.source.manifest_digest = b.manifest.digest();
    const fs::path dir = out_dir(o_);
    save_dictionary(r.dictionary, dir, "dictionary");
    save_matrix(r.activations.values, dir / "activations.npy");

    std::vector<TextGrounding> text;
    if (b.unembedding) text = text_grounding(r.dictionary, *b.unembedding, o_.n_grounding);
    std::vector<ImageGrounding> images;
    const int n_mas = std::min<int>(o_.n_mas, static_cast<int>(b.states.samples()));
    for (int k = 0; k < r.dictionary.size(); ++k) images.push_back(image_grounding(r.activations, k, n_mas));

    Json body{{"K", r.dictionary.size()},
              {"inertia", r.dictionary.inertia},
              {"iterations", r.iterations},
              {"manifest_digest", r.dictionary.source.manifest_digest},
              {"groundings", groundings_json(text, images)}};
    emit(provenance("concepts", base_config()), body, dir / "concepts.json");
  }

  void match() const {
    const Bundle a = load_required(o_.manifest, "--manifest");
    const Bundle b = load_required(o_.manifest_b, "--manifest-b");
    const MatchMode mode = parse_match_mode(o_.match_mode);
    const ConceptDictionary da = fit(a, o_, o_.k);
    const ConceptDictionary db = fit(b, o_, o_.k);
    const Matching m = clens::match(similarity(da, db), mode);
    emit(provenance("match", base_config()), matching_json(m), out_dir(o_) / "matching.json");
  }

  void shift() const {
    const Bundle a = load_required(o_.manifest, "--manifest");
    const Bundle b = load_required(o_.manifest_b, "--manifest-b");
    const std::vector<double> alphas =
        o_.alpha_sweep.empty() ? std::vector<double>{o_.alpha} : parse_doubles(o_.alpha_sweep, "--alpha-sweep");
    std::vector<int> ks{o_.k};
    if (!o_.k_sweep.empty()) {
      ks.clear();
      for (double v : parse_doubles(o_.k_sweep, "--k-sweep")) {
        require(v == std::floor(v) && v >= 1, errc::kInvalidArgument, "--k-sweep entries must be positive integers");
        ks.push_back(static_cast<int>(v));
      }
    }
    const fs::path dir = out_dir(o_);
    const bool tag_k = ks.size() > 1;
    for (int k : ks) {
      const ConceptDictionary da = fit(a, o_, k);
      const ConceptDictionary db = fit(b, o_, k);
      const Matching m = bijective_match(similarity(da, db));
      const ShiftSet shifts = compute_shift_set(a.states, b.states, assignments(project(a.states, da)));
      const std::string ktag = tag_k ? "_k" + std::to_string(k) : "";
      save_matrix(shifts.concept_shifts, dir / ("shift_vectors" + ktag + ".npy"));
      for (double alpha : alphas) {
        const ConceptDictionary shifted = apply_shift(da, shifts, alpha);
        const RecoveryReport rep =
            concept_recovery(da, shifted, db, m, shifts, unembedding_of(a), o_.n_grounding);
        Json cfg = base_config();
        cfg["k"] = k;
        cfg["alpha"] = alpha;
        Json body = recovery_json(rep);
        body["K"] = k;
        body["empty_concepts"] = shifts.empty_concepts;
        body["matching"] = matching_json(m);
        const std::string stem = "recovery" + ktag + "_alpha" + number_tag(alpha);
        emit(provenance("shift", cfg), body, dir / (stem + ".json"));
        write_text(recovery_csv(rep), dir / (stem + ".csv"));
      }
    }
  }

  void drift() const {
    const Bundle a = load_required(o_.manifest, "--manifest");
    require(!o_.checkpoints.empty(), errc::kInvalidArgument, "--checkpoint is required (repeatable)");
    const ConceptDictionary da = fit(a, o_, o_.k);
    std::vector<ConceptDictionary> cks;
    for (const auto& path : o_.checkpoints) cks.push_back(fit(load_bundle(path), o_, o_.k));
    const auto curve = drift_curve(da, cks, unembedding_of(a), o_.n_grounding);
    Json cfg = base_config();
    cfg["checkpoints"] = o_.checkpoints;
    emit(provenance("drift", cfg), Json{{"curve", drift_json(curve)}}, out_dir(o_) / "drift.json");
  }

  void steer_coarse() const {
    const Bundle source = load_required(o_.manifest, "--manifest");
    const Bundle target = load_required(o_.manifest_b, "--manifest-b");
    SteeringVector v = coarse_vector(target.states, source.states, layer_of(o_, source.states));
    v.alpha = o_.alpha;
    v.apply_to = parse_apply_to(o_.apply_to);
    const fs::path dir = out_dir(o_);
    save_steering(v, dir, "coarse");
    emit(provenance("steer coarse", base_config()), Json{{"vectors", {"coarse.npy"}}}, dir / "steer_coarse.json");
  }

  void steer_fine() const {
    const Bundle b = load_required(o_.manifest, "--manifest");
    const ConceptDictionary d = fit(b, o_, o_.k);
    write_vectors("fine", fine_vectors(d, layer_of(o_, b.states)));
  }

  void steer_debias() const {
    const Bundle g = load_required(o_.manifest, "--manifest");
    const Bundle n = load_required(o_.manifest_b, "--manifest-b");
    // Gendered and neutral sets are small; five concepts each unless --k says otherwise.
    const int k = app_.get_option("--k")->count() ? o_.k : 5;
    const ConceptDictionary dg = fit(g, o_, k);
    const ConceptDictionary dn = fit(n, o_, k);
    write_vectors("debias", debias_mapping(dg, dn, layer_of(o_, g.states)));
  }

  void steer_select() const {
    require(!o_.counts_path.empty(), errc::kInvalidArgument, "--counts is required");
    const Json j = read_json(o_.counts_path);
    const AnswerCounts baseline = counts_from(j.at("baseline"));
    std::vector<SteeringVector> candidates;
    std::vector<AnswerCounts> steered;
    for (const auto& entry : j.at("steered")) {
      SteeringVector v;
      v.kind = SteeringKind::coarse;
      v.source_id = entry.value("id", "v" + std::to_string(candidates.size()));
      v.target_id = "?";
      candidates.push_back(v);
      steered.push_back(counts_from(entry.at("counts")));
    }
    auto scores = select_directions(candidates, baseline, steered, o_.top_n);
    // Report the caller's ids, not the placeholder coarse ids.
    for (auto& s : scores) s.vector_id = candidates[s.vector_index].source_id;
    Json cfg = base_config();
    cfg["counts"] = o_.counts_path;
    cfg["top_n"] = o_.top_n;
    emit(provenance("steer select", cfg), Json{{"ranking", direction_scores_json(scores)}},
         out_dir(o_) / "directions.json");
  }

  void steer_apply() const {
    const Bundle b = load_required(o_.manifest, "--manifest");
    require(!o_.vector_path.empty(), errc::kInvalidArgument, "--vector is required");
    const SteeringVector v = load_steering(o_.vector_path);
    const HiddenStates steered = apply_steering(b.states, v, o_.alpha);
    const fs::path dir = out_dir(o_);
    const fs::path manifest = save_bundle(dir, "steered", steered, unembedding_of(b), b.manifest.created);
    Json cfg = base_config();
    cfg["vector"] = o_.vector_path;
    emit(provenance("steer apply", cfg),
         Json{{"manifest", manifest.string()}, {"interventions", steered.interventions}}, dir / "steer_apply.json");
  }

  void eval_style() const {
    require(!o_.captions.empty(), errc::kInvalidArgument, "--captions is required");
    std::vector<KeywordLexicon> lexs;
    if (o_.lexicon_files.empty()) {
      for (const char* name : {"places", "colors", "sentiments"}) lexs.push_back(builtin_lexicon(name));
    } else {
      for (const auto& spec : o_.lexicon_files) {
        const auto eq = spec.find('=');
        require(eq != std::string::npos, errc::kInvalidArgument, "--lexicon expects name=path, got '" + spec + "'");
        lexs.push_back(load_lexicon(spec.substr(eq + 1), spec.substr(0, eq)));
      }
    }
    std::map<std::string, std::size_t> totals;
    for (const auto& l : lexs) totals[l.name] = 0;
    Json rows = Json::array();
    const auto captions = read_lines(o_.captions);
    for (const auto& c : captions) {
      const auto styles = classify_style(c, lexs);
      for (const auto& s : styles) ++totals[s];
      rows.push_back({{"caption", c}, {"styles", styles}});
    }
    Json cfg = base_config();
    cfg["captions"] = o_.captions;
    emit(provenance("eval style", cfg), Json{{"n", captions.size()}, {"counts", totals}, {"captions", rows}},
         out_dir(o_) / "style.json");
  }

  void eval_gender() const {
    require(!o_.before.empty() && !o_.after.empty(), errc::kInvalidArgument, "--before and --after are required");
    const auto g = count_gender_conversions(read_lines(o_.before), read_lines(o_.after), builtin_lexicon("gendered"),
                                            builtin_lexicon("neutral"));
    Json cfg = base_config();
    cfg["before"] = o_.before;
    cfg["after"] = o_.after;
    emit(provenance("eval gender", cfg), Json{{"total_gendered", g.total_gendered}, {"converted", g.converted}},
         out_dir(o_) / "gender.json");
  }

  void eval_asr() const {
    require(!o_.responses.empty(), errc::kInvalidArgument, "--responses is required");
    const RefusalStringList refusals =
        o_.refusals.empty() ? builtin_refusal_strings() : load_refusal_strings(o_.refusals);
    const auto responses = read_lines(o_.responses);
    const double asr = attack_success_rate(responses, refusals);
    std::size_t refused = 0;
    for (const auto& r : responses) refused += is_refusal(r, refusals) ? 1 : 0;
    Json cfg = base_config();
    cfg["responses"] = o_.responses;
    cfg["refusals"] = o_.refusals.empty() ? "builtin" : o_.refusals;
    emit(provenance("eval asr", cfg),
         Json{{"n", responses.size()}, {"refused", refused}, {"non_refused", responses.size() - refused}, {"asr", asr}},
         out_dir(o_) / "asr.json");
  }

  void eval_deltas() const {
    require(!o_.baseline.empty() && !o_.steered.empty(), errc::kInvalidArgument,
            "--baseline and --steered are required");
    const auto d = answer_deltas(counts_from(read_json(o_.baseline)), counts_from(read_json(o_.steered)));
    Json cfg = base_config();
    cfg["baseline"] = o_.baseline;
    cfg["steered"] = o_.steered;
    emit(provenance("eval deltas", cfg), Json{{"deltas", d}}, out_dir(o_) / "deltas.json");
  }

  void pca() const {
    const Bundle b = load_required(o_.manifest, "--manifest");
    const PcaResult r = pca_project(b.states, o_.dims);
    Json cfg = base_config();
    cfg["dims"] = o_.dims;
    emit(provenance("pca", cfg), pca_json(r, b.states.sample_ids), out_dir(o_) / "pca.json");
  }

 private:
  Json base_config() const {
    return Json{{"manifest", o_.manifest},     {"manifest_b", o_.manifest_b}, {"k", o_.k},
                {"n_init", o_.n_init},         {"max_iter", o_.max_iter},     {"n_grounding", o_.n_grounding},
                {"n_mas", o_.n_mas},           {"alpha", o_.alpha},           {"layer", o_.layer},
                {"match_mode", o_.match_mode}, {"apply_to", o_.apply_to}};
  }

  static AnswerCounts counts_from(const Json& j) {
    require(j.is_object(), errc::kInvalidArgument, "answer counts must be a JSON object");
    AnswerCounts c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      require(it.value().is_number(), errc::kInvalidArgument, "count for '" + it.key() + "' is not a number");
      c[it.key()] = it.value().get<double>();
    }
    return c;
  }

  void write_vectors(const std::string& name, std::vector<SteeringVector> vectors) const {
    const fs::path dir = out_dir(o_) / name;
    Json listing = Json::array();
    for (auto& v : vectors) {
      v.alpha = o_.alpha;
      v.apply_to = parse_apply_to(o_.apply_to);
      save_steering(v, dir, v.id());
      listing.push_back({{"id", v.id()}, {"file", (fs::path(name) / (v.id() + ".npy")).string()}});
    }
    emit(provenance("steer " + name, base_config()), Json{{"vectors", listing}}, out_dir(o_) / ("steer_" + name + ".json"));
  }

  const Options& o_;
  const CLI::App& app_;
};

void error_record(const std::string& code, const std::string& detail) {
  std::cerr << Json{{"error", {{"code", code}, {"detail", detail}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clens: concept-level analysis of dumped MLLM hidden states"};
  app.set_config("--config", "", "INI/TOML file with option defaults (flags override it)");
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--manifest", o.manifest, "Bundle manifest (original model / source set)");
  app.add_option("--manifest-b", o.manifest_b, "Second bundle manifest (fine-tuned model / target set)");
  app.add_option("--k", o.k, "Number of concepts K")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Seed for every random choice");
  app.add_option("--n-grounding", o.n_grounding, "Words per text grounding")->check(CLI::PositiveNumber);
  app.add_option("--n-mas", o.n_mas, "Samples per image grounding")->check(CLI::PositiveNumber);
  app.add_option("--n-init", o.n_init, "K-means restarts")->check(CLI::PositiveNumber);
  app.add_option("--max-iter", o.max_iter, "K-means iteration cap")->check(CLI::PositiveNumber);
  app.add_option("--alpha", o.alpha, "Shift / steering strength");
  app.add_option("--alpha-sweep", o.alpha_sweep, "Comma-separated alphas, e.g. 0,0.5,1");
  app.add_option("--k-sweep", o.k_sweep, "Comma-separated K values for shift");
  app.add_option("--layer", o.layer, "Layer recorded on steering vectors (default: manifest layer)");
  app.add_option("--match-mode", o.match_mode, "greedy | bijective")
      ->check(CLI::IsMember({"greedy", "bijective"}));
  app.add_option("--out", o.out, "Output directory");

  Runner run(o, app);
  auto* fx = app.add_subcommand("fixtures", "Write a synthetic original/fine-tuned pair");
  fx->add_option("--dim", o.fixture.dim, "D");
  fx->add_option("--samples", o.fixture.samples, "M");
  fx->add_option("--clusters", o.fixture.clusters, "K_true");
  fx->add_option("--noise-lo", o.fixture.noise_lo, "Lower per-cluster noise scale");
  fx->add_option("--noise-hi", o.fixture.noise_hi, "Upper per-cluster noise scale");
  fx->add_option("--translation", o.fixture.translation_scale, "Per-cluster translation norm");
  fx->add_option("--checkpoints", o.fixture.checkpoints, "Intermediate snapshots for drift");
  fx->callback([&] {
    o.fixture.seed = o.seed;
    run.fixtures();
  });

  app.add_subcommand("concepts", "Fit a concept dictionary and ground it")->callback([&] { run.concepts(); });
  app.add_subcommand("match", "Match the dictionaries of two bundles")->callback([&] { run.match(); });
  app.add_subcommand("shift", "Shift vectors, shifted concepts and recovery reports")
      ->callback([&] { run.shift(); });
  auto* dr = app.add_subcommand("drift", "Concept drift across checkpoints");
  dr->add_option("--checkpoint", o.checkpoints, "Checkpoint manifest (repeatable, in training order)");
  dr->callback([&] { run.drift(); });

  auto* steer = app.add_subcommand("steer", "Steering vectors");
  steer->require_subcommand(1);
  steer->fallthrough();
  steer->add_option("--apply-to", o.apply_to, "all_tokens | text_tokens | generated | prev_and_generated")
      ->check(CLI::IsMember({"all_tokens", "text_tokens", "generated", "prev_and_generated"}));
  steer->add_subcommand("coarse", "mean(--manifest-b) - mean(--manifest)")->callback([&] { run.steer_coarse(); });
  steer->add_subcommand("fine", "All concept-to-concept vectors")->callback([&] { run.steer_fine(); });
  steer->add_subcommand("debias", "Gendered (--manifest) to neutral (--manifest-b)")->callback([&] {
    run.steer_debias();
  });
  auto* sel = steer->add_subcommand("select", "Rank candidate directions by answer-count changes");
  sel->add_option("--counts", o.counts_path, "JSON {baseline:{...}, steered:[{id, counts:{...}}]}");
  sel->add_option("--top-n", o.top_n, "Answers kept per vector")->check(CLI::Range(2, 1 << 20));
  sel->callback([&] { run.steer_select(); });
  auto* ap = steer->add_subcommand("apply", "Add alpha * vector to every column of a bundle");
  ap->add_option("--vector", o.vector_path, "Steering vector .npy (with .json sidecar)");
  ap->callback([&] { run.steer_apply(); });

  auto* ev = app.add_subcommand("eval", "Text evaluators");
  ev->require_subcommand(1);
  ev->fallthrough();
  auto* st = ev->add_subcommand("style", "Caption style keywords");
  st->add_option("--captions", o.captions, "One caption per line");
  st->add_option("--lexicon", o.lexicon_files, "name=path (repeatable; default: built-in places/colors/sentiments)");
  st->callback([&] { run.eval_style(); });
  auto* ge = ev->add_subcommand("gender", "Gendered -> neutral conversions");
  ge->add_option("--before", o.before, "Captions before steering");
  ge->add_option("--after", o.after, "Captions after steering");
  ge->callback([&] { run.eval_gender(); });
  auto* as = ev->add_subcommand("asr", "Attack success rate");
  as->add_option("--responses", o.responses, "One response per line");
  as->add_option("--refusals", o.refusals, "Refusal string list (default: built-in)");
  as->callback([&] { run.eval_asr(); });
  auto* de = ev->add_subcommand("deltas", "Per-answer count changes");
  de->add_option("--baseline", o.baseline, "JSON answer -> count");
  de->add_option("--steered", o.steered, "JSON answer -> count");
  de->callback([&] { run.eval_deltas(); });

  auto* pc = app.add_subcommand("pca", "PCA projection of a bundle");
  pc->add_option("--dims", o.dims, "Components to keep");
  pc->callback([&] { run.pca(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const clens::Error& e) {
    error_record(e.code(), e.detail());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    error_record("invalid json", e.what());
    return 2;
  } catch (const std::exception& e) {
    error_record("internal", e.what());
    return 3;
  }
  return 0;
}
