#pragma once

// The `vea` command line. `run` parses arguments and dispatches to the
// library; it never calls exit() so tests can drive it in-process.
//
// Exit codes: 0 success, 1 validation or domain error, 2 I/O error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vea/attention.hpp"
#include "vea/error.hpp"
#include "vea/formats.hpp"
#include "vea/imageops.hpp"
#include "vea/io.hpp"
#include "vea/maskgen.hpp"
#include "vea/metrics.hpp"
#include "vea/parallel.hpp"
#include "vea/png.hpp"
#include "vea/profiling.hpp"

namespace vea::cli {

inline constexpr const char* kVersion = "1.0.0";

/// Six significant digits; integral values keep a trailing ".0".
inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string fmt_csv(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace detail {

/// All dumps under `dir`, loaded in parallel and ordered by sample_id.
inline std::vector<AttentionDump> load_dumps(const std::filesystem::path& dir, std::size_t jobs) {
  const auto prefixes = list_dump_prefixes(dir);
  std::vector<AttentionDump> dumps(prefixes.size());
  parallel_for(prefixes.size(), jobs, [&](std::size_t i) { dumps[i] = load_dump(prefixes[i]); });
  std::stable_sort(dumps.begin(), dumps.end(), [](const AttentionDump& a, const AttentionDump& b) {
    return a.manifest.sample_id < b.manifest.sample_id;
  });
  for (std::size_t i = 1; i < dumps.size(); ++i)
    if (dumps[i].manifest.sample_id == dumps[i - 1].manifest.sample_id)
      throw Error(ErrorCode::InvariantViolation, "duplicate sample_id " + dumps[i].manifest.sample_id +
                                                     " in " + dir.string());
  return dumps;
}

inline std::map<std::string, EvidenceAnnotation> load_annotations(const std::filesystem::path& path) {
  try {
    return index_annotations(decode_annotations(io::read_file(path)));
  } catch (const Error& e) {
    if (e.is_io()) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline LayerProfile load_profile(const std::filesystem::path& path) {
  try {
    return decode_profile(io::read_file(path));
  } catch (const Error& e) {
    if (e.is_io()) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  try {
    return decode_manifest(io::read_file(path));
  } catch (const Error& e) {
    if (e.is_io()) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline EvidenceLabels labels_for(const AttentionDump& dump, const EvidenceAnnotation& ann) {
  const Manifest& m = dump.manifest;
  return evidence_labels(clamp_boxes(ann, m.image_width_px, m.image_height_px), m);
}

/// Pairs each dump with its annotation; dumps without one are reported.
struct Joined {
  std::vector<const AttentionDump*> dumps;
  std::vector<EvidenceLabels> labels;
};

inline Joined join(const std::vector<AttentionDump>& dumps,
                   const std::map<std::string, EvidenceAnnotation>& annotations, std::ostream& err) {
  Joined j;
  for (const auto& d : dumps) {
    auto it = annotations.find(d.manifest.sample_id);
    if (it == annotations.end()) {
      err << "warning: no annotation for sample " << d.manifest.sample_id << ", skipped\n";
      continue;
    }
    j.dumps.push_back(&d);
    j.labels.push_back(labels_for(d, it->second));
  }
  return j;
}

inline std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  return s;
}

}  // namespace detail

struct Options {
  std::size_t jobs = default_parallelism();

  std::string dumps_dir;
  std::string dump_prefix;
  std::string annotations;
  std::string profile;
  std::string predictions;
  std::string out;
  std::string preview;
  std::string image;
  std::string mask;
  std::string manifest;
  std::string mode;
  std::string sigma_mode = "kernel";
  std::string tie_mode = "strict";
  double fraction = kDefaultLayerFraction;
  double lambda = 10.0;
  double smooth = 0.5;
  double alpha = 0.5;
  double strength = 0.0;
  std::optional<double> binarize;
  std::uint64_t seed = 17;
};

inline int cmd_validate(const Options& o, std::ostream& out) {
  const auto dumps = detail::load_dumps(o.dumps_dir, o.jobs);
  out << "ok n=" << dumps.size() << "\n";
  return 0;
}

inline int cmd_profile(const Options& o, std::ostream& out, std::ostream& err) {
  const auto dumps = detail::load_dumps(o.dumps_dir, o.jobs);
  const auto annotations = detail::load_annotations(o.annotations);
  const auto joined = detail::join(dumps, annotations, err);
  std::vector<DiagnosticSample> samples;
  samples.reserve(joined.dumps.size());
  for (std::size_t i = 0; i < joined.dumps.size(); ++i) samples.push_back({*joined.dumps[i], joined.labels[i]});

  const ProfileResult result = profile_layers(samples, o.fraction, o.jobs);
  for (const auto& id : result.skipped)
    err << "warning: sample " << id << " has degenerate evidence labels, skipped\n";
  const std::string encoded = encode_profile(result.profile);
  io::write_file_atomic(o.out, encoded);
  out << "layers=" << result.profile.num_layers << " selected=" << detail::join_ids(result.profile.selected_layers)
      << " avg_auroc_all=" << fmt_num(result.mean_auroc_all())
      << " avg_auroc_selected=" << fmt_num(result.mean_auroc_selected()) << "\n";
  return 0;
}

inline SigmaMode parse_sigma_mode(const std::string& s) {
  return s == "direct" ? SigmaMode::Direct : SigmaMode::Kernel;
}

inline int cmd_attribute(const Options& o, std::ostream& out) {
  MaskConfig config;
  config.lambda = o.lambda;
  config.smooth_strength = o.smooth;
  config.binarize_threshold = o.binarize;
  config.sigma_mode = parse_sigma_mode(o.sigma_mode);
  config.validate();

  const LayerProfile profile = detail::load_profile(o.profile);
  const AttentionDump dump = load_dump(o.dump_prefix);
  const PixelField mask = build_mask(dump, profile, config);

  const MaskPayload payload = to_payload(dump.manifest.sample_id, mask);
  std::optional<std::string> preview;
  if (!o.preview.empty()) preview = png::encode_preview(mask);
  save_mask(o.out, payload);
  if (preview) io::write_file_atomic(o.preview, *preview);
  out << "mask " << o.out << ".mask.f32 sample_id=" << payload.sample_id << " width=" << payload.width
      << " height=" << payload.height << "\n";
  return 0;
}

inline int cmd_highlight(const Options& o, std::ostream& out) {
  const RasterImage image = png::load(o.image);
  const PixelField mask = from_payload(load_mask(o.mask));
  const RasterImage result = highlight(image, mask, o.alpha);
  png::save(o.out, result);
  out << "highlight " << o.out << " alpha=" << fmt_num(o.alpha) << "\n";
  return 0;
}

inline int cmd_perturb(const Options& o, std::ostream& out) {
  if (o.mode == "patchmask" && o.manifest.empty())
    throw Error(ErrorCode::InvariantViolation, "--mode patchmask requires --manifest");
  std::optional<Manifest> manifest;
  if (!o.manifest.empty()) manifest = detail::load_manifest(o.manifest);
  const RasterImage image = png::load(o.image);
  RasterImage result;
  if (o.mode == "noise") {
    result = perturb_noise(image, o.strength, o.seed);
  } else if (o.mode == "downsample") {
    result = perturb_downsample(image, o.strength);
  } else {
    result = perturb_mask_patches(image, *manifest, o.strength, o.seed);
  }
  png::save(o.out, result);
  out << "perturb " << o.mode << " strength=" << fmt_num(o.strength) << " seed=" << o.seed << " -> " << o.out
      << "\n";
  return 0;
}

inline int cmd_evaluate_qa(const Options& o, std::ostream& out, std::ostream& err) {
  std::map<std::string, std::string> predictions;
  try {
    predictions = decode_predictions(io::read_file(o.predictions));
  } catch (const Error& e) {
    if (e.is_io()) throw;
    throw Error(e.code(), o.predictions + ": " + e.detail());
  }
  const auto gold = detail::load_annotations(o.annotations);
  if (gold.empty()) throw Error(ErrorCode::InvariantViolation, o.annotations + ": no gold records");
  double em = 0.0;
  double f1 = 0.0;
  for (const auto& [id, ann] : gold) {
    auto it = predictions.find(id);
    if (it == predictions.end()) err << "warning: no prediction for sample " << id << ", scored as empty\n";
    const std::string pred = it == predictions.end() ? std::string{} : it->second;
    em += metrics::best_over_answers(pred, ann.answers, metrics::QaMetric::ExactMatch);
    f1 += metrics::best_over_answers(pred, ann.answers, metrics::QaMetric::F1);
  }
  const auto n = static_cast<double>(gold.size());
  out << "em=" << fmt_num(em / n) << " f1=" << fmt_num(f1 / n) << " n=" << gold.size() << "\n";
  return 0;
}

inline int cmd_evaluate_attribution(const Options& o, std::ostream& out, std::ostream& err) {
  const LayerProfile profile = detail::load_profile(o.profile);
  const auto dumps = detail::load_dumps(o.dumps_dir, o.jobs);
  const auto annotations = detail::load_annotations(o.annotations);
  const auto joined = detail::join(dumps, annotations, err);
  const auto ties = o.tie_mode == "half" ? metrics::TieMode::Half : metrics::TieMode::Strict;

  struct Score {
    bool used = false;
    double auroc = 0.0;
    double ndcg = 0.0;
  };
  std::vector<Score> scores(joined.dumps.size());
  parallel_for(scores.size(), o.jobs, [&](std::size_t i) {
    if (joined.labels[i].degenerate()) return;
    const PatchGridScores e = aggregate_evidence(*joined.dumps[i], profile);
    const metrics::ScoredLabels data{joined.labels[i].values, e.values};
    scores[i] = {true, metrics::auroc(data, ties), metrics::ndcg_all(data)};
  });
  double auroc = 0.0;
  double ndcg = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i].used) {
      err << "warning: sample " << joined.dumps[i]->manifest.sample_id
          << " has degenerate evidence labels, skipped\n";
      continue;
    }
    auroc += scores[i].auroc;
    ndcg += scores[i].ndcg;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyDiagnosticSet, "no sample with usable evidence labels");
  out << "auroc=" << fmt_num(auroc / static_cast<double>(n)) << " ndcg=" << fmt_num(ndcg / static_cast<double>(n))
      << " n=" << n << "\n";
  return 0;
}

struct AnalyzeReport {
  std::string rapt_csv;
  std::optional<std::string> evidence_csv;
};

inline AnalyzeReport analyze(const std::vector<AttentionDump>& dumps,
                             const std::map<std::string, EvidenceAnnotation>* annotations, std::size_t jobs,
                             std::ostream& err) {
  if (dumps.empty()) throw Error(ErrorCode::EmptyDiagnosticSet, "no dumps");
  const std::size_t L = dumps.front().manifest.num_layers;
  for (const auto& d : dumps) {
    if (d.manifest.payload_kind != PayloadKind::PerLayerFull)
      throw Error(ErrorCode::RequiresFullPayload, d.manifest.sample_id);
    if (d.manifest.num_layers != L)
      throw Error(ErrorCode::MixedModels, d.manifest.sample_id + ": " + std::to_string(d.manifest.num_layers) +
                                              " layers vs " + std::to_string(L));
  }

  struct Rapt {
    double text = 0.0;
    double image = 0.0;
  };
  std::vector<std::vector<Rapt>> rapts(dumps.size());
  parallel_for(dumps.size(), jobs, [&](std::size_t i) {
    const auto& m = dumps[i].manifest;
    const auto text = text_tokens(m);
    const auto image = image_tokens(m);
    if (text.empty()) throw Error(ErrorCode::EmptySection, m.sample_id + ": no text_spans");
    rapts[i].resize(L);
    for (std::size_t l = 0; l < L; ++l) rapts[i][l] = {rapt(dumps[i], l, text), rapt(dumps[i], l, image)};
  });

  AnalyzeReport report;
  std::ostringstream csv;
  csv << "layer,rapt_text,rapt_image\n";
  for (std::size_t l = 0; l < L; ++l) {
    double t = 0.0;
    double im = 0.0;
    for (const auto& r : rapts) {
      t += r[l].text;
      im += r[l].image;
    }
    const auto n = static_cast<double>(rapts.size());
    csv << l << "," << fmt_csv(t / n) << "," << fmt_csv(im / n) << "\n";
  }
  report.rapt_csv = csv.str();

  if (annotations == nullptr) return report;
  const auto joined = detail::join(dumps, *annotations, err);
  struct Row {
    std::vector<EvidenceCurvePoint> curve;
    std::vector<LayerScore> scores;
  };
  std::vector<std::optional<Row>> rows(joined.dumps.size());
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    if (joined.labels[i].degenerate()) return;
    rows[i] = Row{evidence_curves(*joined.dumps[i], joined.labels[i]),
                  layer_attribution_scores(*joined.dumps[i], joined.labels[i])};
  });
  std::vector<double> ev(L, 0.0), nev(L, 0.0), au(L, 0.0), nd(L, 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i]) {
      err << "warning: sample " << joined.dumps[i]->manifest.sample_id
          << " has degenerate evidence labels, skipped\n";
      continue;
    }
    ++used;
    for (std::size_t l = 0; l < L; ++l) {
      ev[l] += rows[i]->curve[l].rapt_evidence;
      nev[l] += rows[i]->curve[l].rapt_non_evidence;
      au[l] += rows[i]->scores[l].auroc;
      nd[l] += rows[i]->scores[l].ndcg;
    }
  }
  if (used == 0) throw Error(ErrorCode::EmptyDiagnosticSet, "no sample with usable evidence labels");
  std::ostringstream ecsv;
  ecsv << "layer,rapt_evidence,rapt_non_evidence,auroc,ndcg\n";
  const auto n = static_cast<double>(used);
  for (std::size_t l = 0; l < L; ++l)
    ecsv << l << "," << fmt_csv(ev[l] / n) << "," << fmt_csv(nev[l] / n) << "," << fmt_csv(au[l] / n) << ","
         << fmt_csv(nd[l] / n) << "\n";
  report.evidence_csv = ecsv.str();
  return report;
}

inline int cmd_analyze(const Options& o, std::ostream& out, std::ostream& err) {
  const auto dumps = detail::load_dumps(o.dumps_dir, o.jobs);
  std::optional<std::map<std::string, EvidenceAnnotation>> annotations;
  if (!o.annotations.empty()) annotations = detail::load_annotations(o.annotations);
  const AnalyzeReport report = analyze(dumps, annotations ? &*annotations : nullptr, o.jobs, err);
  if (o.out.empty()) {
    out << report.rapt_csv;
    if (report.evidence_csv) out << "\n" << *report.evidence_csv;
    return 0;
  }
  io::write_file_atomic(o.out + ".rapt.csv", report.rapt_csv);
  if (report.evidence_csv) io::write_file_atomic(o.out + ".evidence.csv", *report.evidence_csv);
  out << "analyze samples=" << dumps.size() << " layers=" << dumps.front().manifest.num_layers << "\n";
  return 0;
}

/// Parses `args` (without the program name) and runs the chosen subcommand.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual evidence attribution from vision-language model attention", "vea"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print version and interchange format_version");

  Options o;
  auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", o.jobs, "Worker threads for per-sample work")->check(CLI::PositiveNumber);
  };
  auto finite_unit = CLI::Range(0.0, 1.0);

  auto* validate = app.add_subcommand("validate", "Check every dump in a directory against the format contract");
  validate->add_option("--dumps", o.dumps_dir, "Directory of <id>.manifest.json + <id>.attn.f32")->required();
  add_jobs(validate);

  auto* profile = app.add_subcommand("profile", "Select visual-grounding layers from a diagnostic set");
  profile->add_option("--dumps", o.dumps_dir)->required();
  profile->add_option("--annotations", o.annotations)->required();
  profile->add_option("--fraction", o.fraction, "Fraction of layers to keep (rounded up)")
      ->check(CLI::Range(0.0, 1.0));
  profile->add_option("--out", o.out, "profile.json to write")->required();
  add_jobs(profile);

  auto* attribute = app.add_subcommand("attribute", "Build the evidence mask for one dump");
  attribute->add_option("--dump", o.dump_prefix, "Dump prefix")->required();
  attribute->add_option("--profile", o.profile)->required();
  attribute->add_option("--lambda", o.lambda, "Denoise threshold multiplier (> 1)");
  attribute->add_option("--smooth", o.smooth, "Smooth strength in [0, 1]")->check(finite_unit);
  attribute->add_option("--binarize", o.binarize, "Threshold the mask to {0, 1}");
  attribute->add_option("--sigma-mode", o.sigma_mode, "kernel: strength*side is the kernel size; direct: it is sigma")
      ->check(CLI::IsMember({"kernel", "direct"}));
  attribute->add_option("--out", o.out, "Output prefix for .mask.f32 / .mask.json")->required();
  attribute->add_option("--preview", o.preview, "Optional grayscale PNG preview");
  add_jobs(attribute);

  auto* hl = app.add_subcommand("highlight", "Blend a mask into an image");
  hl->add_option("--image", o.image)->required();
  hl->add_option("--mask", o.mask, "Mask prefix")->required();
  hl->add_option("--alpha", o.alpha, "Highlight strength in [0, 1]")->check(finite_unit);
  hl->add_option("--out", o.out)->required();
  add_jobs(hl);

  auto* perturb = app.add_subcommand("perturb", "Apply a robustness perturbation");
  perturb->add_option("--mode", o.mode)->required()->check(CLI::IsMember({"noise", "downsample", "patchmask"}));
  perturb->add_option("--strength", o.strength)->required()->check(finite_unit);
  perturb->add_option("--seed", o.seed);
  perturb->add_option("--image", o.image)->required();
  perturb->add_option("--manifest", o.manifest, "Manifest providing the patch grid (patchmask)");
  perturb->add_option("--out", o.out)->required();
  add_jobs(perturb);

  auto* evaluate = app.add_subcommand("evaluate", "QA or attribution metrics");
  evaluate->require_subcommand(1);
  auto* qa = evaluate->add_subcommand("qa", "Exact match and token F1");
  qa->add_option("--predictions", o.predictions)->required();
  qa->add_option("--gold", o.annotations)->required();
  add_jobs(qa);
  auto* attr = evaluate->add_subcommand("attribution", "AUROC and NDCG@all of aggregated patch scores");
  attr->add_option("--dumps", o.dumps_dir)->required();
  attr->add_option("--profile", o.profile)->required();
  attr->add_option("--annotations", o.annotations)->required();
  attr->add_option("--tie-mode", o.tie_mode, "strict: ties count 0; half: ties count 0.5")
      ->check(CLI::IsMember({"strict", "half"}));
  add_jobs(attr);

  auto* analyze_cmd = app.add_subcommand("analyze", "Per-layer RAPT and evidence reports as CSV");
  analyze_cmd->add_option("--dumps", o.dumps_dir)->required();
  analyze_cmd->add_option("--annotations", o.annotations);
  analyze_cmd->add_option("--out", o.out, "Prefix for .rapt.csv / .evidence.csv (default: stdout)");
  add_jobs(analyze_cmd);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (show_version) {
      out << "vea " << kVersion << " format_version=" << kFormatVersion << "\n";
      return 0;
    }
    if (*validate) return cmd_validate(o, out);
    if (*profile) return cmd_profile(o, out, err);
    if (*attribute) return cmd_attribute(o, out);
    if (*hl) return cmd_highlight(o, out);
    if (*perturb) return cmd_perturb(o, out);
    if (*qa) return cmd_evaluate_qa(o, out, err);
    if (*attr) return cmd_evaluate_attribution(o, out, err);
    if (*analyze_cmd) return cmd_analyze(o, out, err);
    out << app.help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_io() ? 2 : 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vea::cli
