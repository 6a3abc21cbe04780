// streamid: encrypted video stream identification toolkit.
// Subcommands: ingest, synth, train, gallery, predict, eval.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "streamid/baselines.hpp"
#include "streamid/evalx.hpp"
#include "streamid/gallery.hpp"
#include "streamid/metriclearn.hpp"
#include "streamid/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace streamid;

namespace {

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::string& command, const std::string& config_path,
                    std::uint64_t seed,
                    const std::map<std::string, std::string>& artifacts,
                    const std::string& manifest_path) {
  json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["seed"] = seed;
  j["artifact_paths"] = artifacts;
  j["timestamp"] = iso8601_now();
  std::ofstream f(manifest_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest: " + manifest_path);
  f << j.dump(2) << "\n";
}

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  return j;
}

Dataset load_merged(const std::vector<std::string>& paths) {
  Dataset out;
  for (const auto& p : paths) {
    Dataset d = load_dataset(p);
    out.samples.insert(out.samples.end(), d.samples.begin(), d.samples.end());
  }
  return out;
}

// ---------------------------------------------------------------- ingest

int cmd_ingest(const std::string& csv_dir, const std::string& out_path,
               const std::optional<std::string>& dns_hint) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(csv_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") {
      files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cerr << "warning: no capture CSVs found in " << csv_dir << "\n";
  }

  struct PendingCapture {
    Capture capture;
    std::string video_id, stream_id;
    Split split = Split::kTest;
    std::string recording;
  };
  std::vector<PendingCapture> pending;
  for (const auto& file : files) {
    PendingCapture pc;
    pc.capture = parse_capture_csv(file);
    const std::string sidecar = file.substr(0, file.size() - 4) + ".json";
    if (fs::exists(sidecar)) {
      const json j = load_json_file(sidecar);
      if (j.contains("capture_id")) pc.capture.capture_id = j.at("capture_id");
      if (j.contains("dns_name")) pc.capture.meta["dns_name"] = j.at("dns_name");
      if (j.contains("flow_key")) pc.capture.flow_key = j.at("flow_key");
      pc.video_id = j.value("video_id", "");
      pc.stream_id = j.value("stream_id", "");
      pc.recording = j.value("recording_id", "");
      if (j.contains("split")) pc.split = split_from_name(j.at("split"));
    }
    if (pc.video_id.empty()) pc.video_id = pc.capture.capture_id;
    if (pc.stream_id.empty()) pc.stream_id = pc.capture.capture_id;
    if (pc.recording.empty()) pc.recording = pc.capture.capture_id;
    pending.push_back(std::move(pc));
  }

  // files sharing a recording_id are candidate flows of one recording
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    groups[pending[i].recording].push_back(i);
  }

  Dataset ds;
  for (const auto& [rec, idxs] : groups) {
    std::vector<Capture> captures;
    for (const auto i : idxs) captures.push_back(pending[i].capture);
    Capture selected = select_video_flow(captures, dns_hint);
    if (const auto it = selected.meta.find("warning"); it != selected.meta.end()) {
      std::cerr << "warning: recording " << rec << ": " << it->second << "\n";
    }
    const auto& src = pending[idxs.front()];
    selected = shift_to_origin(std::move(selected));
    ds.samples.push_back(
        make_sample(selected, src.video_id, src.stream_id, src.split));
  }
  save_dataset(ds, out_path);
  std::cout << "wrote " << ds.size() << " samples to " << out_path << "\n";
  return 0;
}

// ----------------------------------------------------------------- synth

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
  BenchmarkSpec spec = benchmark_spec_from_json_file(config_path);
  if (seed_override.has_value()) spec.seed = *seed_override;
  fs::create_directories(out_dir);
  const Benchmark b = build_benchmark(spec);

  const std::string train_path = out_dir + "/train.ndjson";
  const std::string test_path = out_dir + "/test.ndjson";
  const std::string tune_path = out_dir + "/tune.ndjson";
  const std::string out_path = out_dir + "/out.ndjson";
  save_dataset(b.train_test.filter_split(Split::kTrain), train_path);
  save_dataset(b.train_test.filter_split(Split::kTest), test_path);
  save_dataset(b.tune, tune_path);
  save_dataset(b.out, out_path);
  write_manifest("synth", config_path, spec.seed,
                 {{"train", train_path},
                  {"test", test_path},
                  {"tune", tune_path},
                  {"out", out_path}},
                 out_dir + "/manifest.json");
  std::cout << "wrote " << b.train_test.size() << " train/test, " << b.tune.size()
            << " tune, " << b.out.size() << " out samples to " << out_dir << "\n";
  return 0;
}

// ----------------------------------------------------------------- train

int cmd_train(const std::string& config_path,
              std::optional<std::uint64_t> seed_override) {
  const json cfg = load_json_file(config_path);
  const std::string objective = cfg.value("objective", "triplet");
  const std::string train_path = cfg.at("train_dataset").get<std::string>();
  const std::string checkpoint_out = cfg.at("checkpoint_out").get<std::string>();
  const std::string loss_log_out = cfg.value("loss_log_out", "");

  Dataset train_all = load_dataset(train_path);
  Dataset train_ds = train_all.filter_split(Split::kTrain);
  if (train_ds.samples.empty()) train_ds = std::move(train_all);

  BackboneConfig backbone;
  if (cfg.contains("backbone")) backbone = backbone_config_from_json(cfg.at("backbone"));

  std::map<std::string, std::string> artifacts{{"checkpoint", checkpoint_out}};
  std::uint64_t seed = 0;

  if (objective == "triplet") {
    TrainConfig tc;
    if (cfg.contains("train")) tc = train_config_from_json(cfg.at("train"));
    if (seed_override.has_value()) tc.seed = *seed_override;
    seed = tc.seed;
    Dataset tune_ds;
    const Dataset* tune_ptr = nullptr;
    if (tc.use_ol) {
      if (!cfg.contains("tune_dataset")) {
        throw std::runtime_error("OL requires tune split: set tune_dataset");
      }
      tune_ds = load_dataset(cfg.at("tune_dataset").get<std::string>());
      tune_ptr = &tune_ds;
    }
    EmbeddingModel model(backbone, seed_mix(tc.seed, fnv1a64("model-init")));
    const TrainResult result = train(model, train_ds, tc, tune_ptr);
    model.save(checkpoint_out);
    if (!loss_log_out.empty()) {
      write_loss_log_csv(loss_log_out, result.log);
      artifacts["loss_log"] = loss_log_out;
    }
  } else if (objective == "cross_entropy") {
    CeTrainConfig cc;
    if (cfg.contains("ce")) {
      const auto& c = cfg.at("ce");
      cc.epochs = c.value("epochs", 50);
      cc.batch_size = c.value("batch_size", 128);
      cc.lr = c.value("lr", 3e-4);
      cc.weight_decay = c.value("weight_decay", 0.01);
      cc.seed = c.value("seed", 0ULL);
    }
    if (seed_override.has_value()) cc.seed = *seed_override;
    seed = cc.seed;
    CeTrainResult result;
    CeClassifier clf = ce_train(train_ds, backbone, cc, &result);
    clf.save(checkpoint_out);
    if (!loss_log_out.empty()) {
      std::ofstream f(loss_log_out, std::ios::binary);
      if (!f) throw std::runtime_error("cannot open for writing: " + loss_log_out);
      f << "step,loss\n";
      for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
        f << (i + 1) << ',' << format_exact(result.step_losses[i]) << '\n';
      }
      artifacts["loss_log"] = loss_log_out;
    }
  } else {
    throw std::runtime_error("unknown objective: " + objective);
  }
  write_manifest("train", config_path, seed, artifacts,
                 checkpoint_out + ".manifest.json");
  return 0;
}

// --------------------------------------------------------------- gallery

int cmd_gallery(const std::string& model_path, const std::string& dataset_path,
                const std::string& out_path, const std::string& split) {
  EmbeddingModel model = EmbeddingModel::load(model_path);
  Dataset ds = load_dataset(dataset_path);
  if (split != "all") {
    Dataset filtered = ds.filter_split(split_from_name(split));
    if (!filtered.samples.empty()) ds = std::move(filtered);
  }
  const Gallery g = build_gallery(model, ds);
  save_gallery(g, out_path);
  write_manifest("gallery", dataset_path, 0, {{"gallery", out_path}},
                 out_path + ".manifest.json");
  std::cout << "gallery with " << g.num_classes() << " classes -> " << out_path
            << "\n";
  return 0;
}

// --------------------------------------------------------------- predict

int cmd_predict(const std::string& model_path, const std::string& gallery_path,
                const std::string& dataset_path, const std::string& out_path,
                std::optional<double> threshold) {
  EmbeddingModel model = EmbeddingModel::load(model_path);
  const Gallery g = load_gallery(gallery_path);
  if (g.dim != model.config().embedding_dim) {
    throw std::runtime_error(
        "incompatible artifacts: gallery dim " + std::to_string(g.dim) +
        " != checkpoint embedding dim " +
        std::to_string(model.config().embedding_dim));
  }
  const Dataset ds = load_dataset(dataset_path);
  const auto emb = embed_dataset(model, ds);
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + out_path);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* e = emb.data() + i * static_cast<std::size_t>(g.dim);
    const int cls = predict(e, g);
    const double conf = confidence(e, g);
    const bool rejected = threshold.has_value() && conf < *threshold;
    json row;
    row["stream_id"] = ds.samples[i].stream_id;
    row["video_id"] = g.class_ids[static_cast<std::size_t>(cls)];
    row["confidence"] = conf;
    row["status"] = rejected ? "rejected" : "accepted";
    f << row.dump() << "\n";
  }
  write_manifest("predict", dataset_path, 0, {{"predictions", out_path}},
                 out_path + ".manifest.json");
  return 0;
}

// ------------------------------------------------------------------ eval

std::string fmt_pm(const MetricStat& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f \xc2\xb1 %.2f", s.mean, s.stdev);
  return buf;
}

void write_table_csv(const std::string& path,
                     const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "model,accuracy,map,recall\n";
  for (const auto& [name, rep] : rows) {
    f << name << ',' << fmt_pm(rep.accuracy) << ',' << fmt_pm(rep.map) << ','
      << fmt_pm(rep.recall_at_full_precision) << '\n';
  }
}

int cmd_eval(const std::string& config_path,
             std::optional<std::uint64_t> seed_override) {
  const json cfg = load_json_file(config_path);
  const std::string protocol = cfg.at("protocol").get<std::string>();
  const std::string report_out = cfg.at("report_out").get<std::string>();
  const std::string csv_out = cfg.value("csv_out", "");
  std::uint64_t base_seed = cfg.value("seed", 0ULL);
  if (seed_override.has_value()) base_seed = *seed_override;
  const int runs = cfg.value("runs", 1);
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < runs; ++r) seeds.push_back(base_seed + static_cast<std::uint64_t>(r));

  BackboneConfig backbone;
  if (cfg.contains("backbone")) backbone = backbone_config_from_json(cfg.at("backbone"));
  TrainConfig tc;
  if (cfg.contains("train")) tc = train_config_from_json(cfg.at("train"));

  json report;
  report["protocol"] = protocol;
  report["config_echo"] = cfg;
  report["seeds"] = seeds;
  std::vector<std::pair<std::string, MetricsReport>> table_rows;

  if (protocol == "robustness") {
    const Dataset train_ds =
        load_dataset(cfg.at("train_dataset").get<std::string>())
            .filter_split(Split::kTrain);
    const Dataset test_ds =
        load_dataset(cfg.at("test_dataset").get<std::string>())
            .filter_split(Split::kTest);
    const Dataset out_ds = load_dataset(cfg.at("out_dataset").get<std::string>());
    Dataset tune_ds;
    if (cfg.contains("tune_dataset")) {
      tune_ds = load_dataset(cfg.at("tune_dataset").get<std::string>());
    }
    std::vector<std::string> models =
        cfg.value("models", std::vector<std::string>{"triplet", "ce", "knn"});

    json results = json::object();
    for (const auto& name : models) {
      std::vector<RunMetrics> per_run;
      for (const auto seed : seeds) {
        if (name == "triplet" || name == "triplet_ol") {
          TrainConfig rtc = tc;
          rtc.seed = seed;
          rtc.use_ol = name == "triplet_ol";
          if (rtc.use_ol && tune_ds.samples.empty()) {
            throw std::runtime_error("OL requires tune split: set tune_dataset");
          }
          EmbeddingModel model(backbone, seed_mix(seed, fnv1a64("model-init")));
          train(model, train_ds, rtc, rtc.use_ol ? &tune_ds : nullptr);
          const Gallery g = build_gallery(model, train_ds);
          GalleryScorer scorer(model, g);
          per_run.push_back(robustness_eval(scorer, test_ds, out_ds));
        } else if (name == "ce") {
          CeTrainConfig cc;
          cc.epochs = cfg.value("ce", json::object()).value("epochs", 50);
          cc.batch_size = cfg.value("ce", json::object()).value("batch_size", 128);
          cc.seed = seed;
          CeClassifier clf = ce_train(train_ds, backbone, cc);
          CeScorer scorer(clf);
          per_run.push_back(robustness_eval(scorer, test_ds, out_ds));
        } else if (name == "knn") {
          const auto cands =
              cfg.value("knn_candidates", std::vector<int>{1, 3, 5});
          const KnnModel knn = knn_fit(train_ds, cands, 5, seed);
          KnnScorer scorer(knn);
          per_run.push_back(robustness_eval(scorer, test_ds, out_ds));
        } else {
          throw std::runtime_error("unknown model: " + name);
        }
      }
      const MetricsReport rep = aggregate_runs(per_run, seeds);
      results[name] = rep.to_json();
      table_rows.emplace_back(name, rep);
    }
    report["results"] = std::move(results);
  } else if (protocol == "leave_out") {
    const Dataset ds = load_merged(
        cfg.at("datasets").get<std::vector<std::string>>());
    LeaveOutConfig lc;
    lc.fraction = cfg.value("fraction", 0.1);
    lc.shots = cfg.value("shots", std::vector<int>{1});
    lc.backbone = backbone;
    lc.train_cfg = tc;
    lc.seeds = seeds;
    report["results"] = leave_out_protocol(ds, lc).to_json();
  } else if (protocol == "transfer") {
    const Dataset source = load_merged(
        cfg.at("source_datasets").get<std::vector<std::string>>());
    const Dataset target = load_merged(
        cfg.at("target_datasets").get<std::vector<std::string>>());
    Dataset target_out;
    if (cfg.contains("target_out_dataset")) {
      target_out = load_dataset(cfg.at("target_out_dataset").get<std::string>());
    }
    TransferConfig xc;
    xc.shots = cfg.value("shots", std::vector<int>{0, 1, 3});
    xc.backbone = backbone;
    xc.train_cfg = tc;
    xc.seeds = seeds;
    xc.train_target_baseline = cfg.value("train_target_baseline", true);
    const TransferResult result = transfer_protocol(
        source, target, target_out.samples.empty() ? nullptr : &target_out, xc);
    report["results"] = result.to_json();
    for (std::size_t i = 0; i < result.shots.size(); ++i) {
      table_rows.emplace_back(
          "triplet (" + std::to_string(result.shots[i]) + "-shot)",
          result.by_shot[i]);
    }
    if (result.baseline_trained) {
      table_rows.emplace_back("triplet (trained)", result.target_baseline);
    }
  } else {
    throw std::runtime_error("unknown protocol: " + protocol);
  }

  {
    std::ofstream f(report_out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + report_out);
    f << report.dump(2) << "\n";
  }
  std::map<std::string, std::string> artifacts{{"report", report_out}};
  if (!csv_out.empty() && !table_rows.empty()) {
    write_table_csv(csv_out, table_rows);
    artifacts["csv"] = csv_out;
  }
  write_manifest("eval", config_path, base_seed, artifacts,
                 report_out + ".manifest.json");
  std::cout << "report -> " << report_out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"encrypted video stream identification toolkit"};
  app.require_subcommand(1);

  std::string csv_dir, out_path, config_path, model_path, gallery_path,
      dataset_path, split = "train";
  std::string dns_hint_raw;
  double threshold_raw = -1.0;
  std::int64_t seed_raw = -1;

  auto* ingest = app.add_subcommand("ingest", "capture CSVs -> NDJSON dataset");
  ingest->add_option("--dir", csv_dir, "directory of capture CSVs")->required();
  ingest->add_option("--out", out_path, "output dataset path")->required();
  ingest->add_option("--dns-hint", dns_hint_raw, "preferred dns_name");

  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  synth->add_option("--config", config_path, "benchmark spec JSON")->required();
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--seed", seed_raw, "override the spec seed");

  auto* train = app.add_subcommand("train", "train a model from a config");
  train->add_option("--config", config_path, "train config JSON")->required();
  train->add_option("--seed", seed_raw, "override the config seed");

  auto* gallery = app.add_subcommand("gallery", "build a centroid gallery");
  gallery->add_option("--model", model_path, "checkpoint path")->required();
  gallery->add_option("--dataset", dataset_path, "dataset path")->required();
  gallery->add_option("--out", out_path, "gallery output path")->required();
  gallery->add_option("--split", split, "split to use (train|test|tune|out|all)");

  auto* predict = app.add_subcommand("predict", "classify streams against a gallery");
  predict->add_option("--model", model_path, "checkpoint path")->required();
  predict->add_option("--gallery", gallery_path, "gallery path")->required();
  predict->add_option("--dataset", dataset_path, "dataset path")->required();
  predict->add_option("--out", out_path, "predictions NDJSON path")->required();
  predict->add_option("--threshold", threshold_raw,
                      "reject streams with confidence below this");

  auto* eval = app.add_subcommand("eval", "run an experiment protocol");
  eval->add_option("--config", config_path, "protocol config JSON")->required();
  eval->add_option("--seed", seed_raw, "override the config seed");

  CLI11_PARSE(app, argc, argv);

  const std::optional<std::uint64_t> seed_override =
      seed_raw >= 0 ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(seed_raw))
                    : std::nullopt;
  try {
    if (ingest->parsed()) {
      const std::optional<std::string> hint =
          dns_hint_raw.empty() ? std::nullopt
                               : std::optional<std::string>(dns_hint_raw);
      return cmd_ingest(csv_dir, out_path, hint);
    }
    if (synth->parsed()) return cmd_synth(config_path, out_path, seed_override);
    if (train->parsed()) return cmd_train(config_path, seed_override);
    if (gallery->parsed()) {
      return cmd_gallery(model_path, dataset_path, out_path, split);
    }
    if (predict->parsed()) {
      const std::optional<double> threshold =
          predict->count("--threshold") > 0 ? std::optional<double>(threshold_raw)
                                            : std::nullopt;
      return cmd_predict(model_path, gallery_path, dataset_path, out_path,
                         threshold);
    }
    if (eval->parsed()) return cmd_eval(config_path, seed_override);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
