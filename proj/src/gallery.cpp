#include "streamid/gallery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace streamid {

using nlohmann::json;

std::vector<double> embed_dataset(EmbeddingModel& model, const Dataset& ds,
                                  int batch_size) {
  const auto& cfg = model.config();
  const int feat = cfg.in_channels * cfg.input_len;
  const int dim = cfg.embedding_dim;
  std::vector<double> out(ds.size() * static_cast<std::size_t>(dim));
  std::vector<double> x;
  std::size_t done = 0;
  while (done < ds.size()) {
    const int b = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), ds.size() - done));
    x.assign(static_cast<std::size_t>(b) * feat, 0.0);
    for (int i = 0; i < b; ++i) {
      const auto& s = ds.samples[done + static_cast<std::size_t>(i)];
      if (s.features.size() != static_cast<std::size_t>(feat)) {
        throw std::runtime_error("embed_dataset: feature shape mismatch for " +
                                 s.stream_id);
      }
      std::copy(s.features.begin(), s.features.end(),
                x.begin() + static_cast<std::size_t>(i) * feat);
    }
    const auto emb = model.forward(x, b, false);
    std::copy(emb.begin(), emb.end(),
              out.begin() + done * static_cast<std::size_t>(dim));
    done += static_cast<std::size_t>(b);
  }
  return out;
}

Gallery build_gallery(EmbeddingModel& model, const Dataset& ds) {
  if (ds.samples.empty()) throw std::runtime_error("build_gallery: empty dataset");
  const int dim = model.config().embedding_dim;
  const auto emb = embed_dataset(model, ds);
  const auto ids = ds.class_ids();
  const auto labels = ds.labels();

  Gallery g;
  g.dim = dim;
  g.class_ids = ids;
  g.shots_per_class.assign(ids.size(), 0);
  g.centroids.assign(ids.size() * static_cast<std::size_t>(dim), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    ++g.shots_per_class[k];
    const double* e = emb.data() + i * static_cast<std::size_t>(dim);
    double* c = g.centroids.data() + k * static_cast<std::size_t>(dim);
    for (int d = 0; d < dim; ++d) c[d] += e[d];
  }
  for (std::size_t k = 0; k < ids.size(); ++k) {
    double* c = g.centroids.data() + k * static_cast<std::size_t>(dim);
    const double inv = 1.0 / static_cast<double>(g.shots_per_class[k]);
    for (int d = 0; d < dim; ++d) c[d] *= inv;
  }
  return g;
}

std::vector<double> score(const double* embedding, const Gallery& g) {
  const int k = g.num_classes();
  std::vector<double> neg_dist(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double* c = g.centroid(i);
    double acc = 0.0;
    for (int d = 0; d < g.dim; ++d) {
      const double diff = c[d] - embedding[d];
      acc += diff * diff;
    }
    neg_dist[static_cast<std::size_t>(i)] = -std::sqrt(acc);
  }
  const double shift = *std::max_element(neg_dist.begin(), neg_dist.end());
  double total = 0.0;
  std::vector<double> s(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    s[static_cast<std::size_t>(i)] =
        std::exp(neg_dist[static_cast<std::size_t>(i)] - shift);
    total += s[static_cast<std::size_t>(i)];
  }
  for (auto& v : s) v /= total;
  return s;
}

int predict(const double* embedding, const Gallery& g) {
  const auto s = score(embedding, g);
  int best = 0;
  for (int i = 1; i < g.num_classes(); ++i) {
    if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(best)]) {
      best = i;
    }
  }
  return best;
}

double confidence(const double* embedding, const Gallery& g) {
  const auto s = score(embedding, g);
  return *std::max_element(s.begin(), s.end());
}

Gallery add_class(const Gallery& g, EmbeddingModel& model,
                  const std::vector<StreamSample>& shots) {
  if (shots.empty()) throw std::runtime_error("add_class: no shots");
  const std::string& vid = shots.front().video_id;
  for (const auto& s : shots) {
    if (s.video_id != vid) {
      throw std::runtime_error("add_class: shots must share one video_id");
    }
  }
  if (std::find(g.class_ids.begin(), g.class_ids.end(), vid) !=
      g.class_ids.end()) {
    throw std::runtime_error("add_class: video_id '" + vid +
                             "' already present; use replace_centroids");
  }
  Dataset ds;
  ds.samples = shots;
  const auto emb = embed_dataset(model, ds);
  Gallery out = g;
  out.class_ids.push_back(vid);
  out.shots_per_class.push_back(static_cast<int>(shots.size()));
  std::vector<double> centroid(static_cast<std::size_t>(g.dim), 0.0);
  for (std::size_t i = 0; i < shots.size(); ++i) {
    const double* e = emb.data() + i * static_cast<std::size_t>(g.dim);
    for (int d = 0; d < g.dim; ++d) centroid[static_cast<std::size_t>(d)] += e[d];
  }
  for (auto& v : centroid) v /= static_cast<double>(shots.size());
  out.centroids.insert(out.centroids.end(), centroid.begin(), centroid.end());
  return out;
}

Gallery replace_centroids(const Gallery& g, EmbeddingModel& model,
                          const Dataset& target_ds) {
  if (target_ds.samples.empty()) {
    throw std::runtime_error("replace_centroids: empty target dataset");
  }
  std::map<std::string, int> index;
  for (int i = 0; i < g.num_classes(); ++i) {
    index[g.class_ids[static_cast<std::size_t>(i)]] = i;
  }
  for (const auto& s : target_ds.samples) {
    if (index.find(s.video_id) == index.end()) {
      throw std::runtime_error("replace_centroids: unknown video_id '" +
                               s.video_id + "'");
    }
  }
  const auto emb = embed_dataset(model, target_ds);
  Gallery out = g;
  std::vector<int> counts(static_cast<std::size_t>(g.num_classes()), 0);
  std::vector<double> sums(g.centroids.size(), 0.0);
  for (std::size_t i = 0; i < target_ds.size(); ++i) {
    const int k = index[target_ds.samples[i].video_id];
    ++counts[static_cast<std::size_t>(k)];
    const double* e = emb.data() + i * static_cast<std::size_t>(g.dim);
    double* c = sums.data() + static_cast<std::size_t>(k) * g.dim;
    for (int d = 0; d < g.dim; ++d) c[d] += e[d];
  }
  for (int k = 0; k < g.num_classes(); ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) continue;  // keep original
    const double inv = 1.0 / counts[static_cast<std::size_t>(k)];
    double* dst = out.centroids.data() + static_cast<std::size_t>(k) * g.dim;
    const double* src = sums.data() + static_cast<std::size_t>(k) * g.dim;
    for (int d = 0; d < g.dim; ++d) dst[d] = src[d] * inv;
    out.shots_per_class[static_cast<std::size_t>(k)] =
        counts[static_cast<std::size_t>(k)];
  }
  return out;
}

void save_gallery(const Gallery& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  json header;
  header["version"] = "gallery/1";
  header["class_ids"] = g.class_ids;
  header["shots_per_class"] = g.shots_per_class;
  header["dim"] = g.dim;
  f << header.dump() << "\n";
  for (int k = 0; k < g.num_classes(); ++k) {
    const double* c = g.centroid(k);
    for (int d = 0; d < g.dim; ++d) {
      if (d > 0) f << ' ';
      f << format_exact(c[d]);
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

Gallery load_gallery(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty gallery file");
  json header;
  try {
    header = json::parse(line);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": bad gallery header: " + e.what());
  }
  if (header.value("version", "") != "gallery/1") {
    throw std::runtime_error(path + ": incompatible artifacts: not a gallery/1 file");
  }
  Gallery g;
  g.class_ids = header.at("class_ids").get<std::vector<std::string>>();
  g.shots_per_class = header.at("shots_per_class").get<std::vector<int>>();
  g.dim = header.at("dim").get<int>();
  if (g.shots_per_class.size() != g.class_ids.size() || g.dim < 1) {
    throw std::runtime_error(path + ": bad gallery header fields");
  }
  g.centroids.reserve(g.class_ids.size() * static_cast<std::size_t>(g.dim));
  for (std::size_t k = 0; k < g.class_ids.size(); ++k) {
    if (!std::getline(f, line)) {
      throw std::runtime_error(path + ": missing centroid row " + std::to_string(k));
    }
    const char* p = line.c_str();
    for (int d = 0; d < g.dim; ++d) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw std::runtime_error(path + ": bad centroid row " + std::to_string(k));
      }
      g.centroids.push_back(v);
      p = end;
    }
  }
  return g;
}

}  // namespace streamid
