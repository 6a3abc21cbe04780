#ifndef STREAMID_GALLERY_HPP_
#define STREAMID_GALLERY_HPP_

#include <string>
#include <vector>

#include "streamid/backbone.hpp"
#include "streamid/flowio.hpp"

namespace streamid {

// Per-video centroids in embedding space. Immutable value: add_class and
// replace_centroids return new galleries.
struct Gallery {
  int dim = 0;
  std::vector<std::string> class_ids;   // unique, in build order
  std::vector<int> shots_per_class;
  std::vector<double> centroids;        // K x dim, row-major

  int num_classes() const { return static_cast<int>(class_ids.size()); }
  const double* centroid(int k) const {
    return centroids.data() + static_cast<std::size_t>(k) * dim;
  }
};

// Eval-mode embeddings for every sample, row-major [n][dim].
std::vector<double> embed_dataset(EmbeddingModel& model, const Dataset& ds,
                                  int batch_size = 64);

// One centroid per distinct video_id (lexicographic class order), each the
// arithmetic mean of that video's embeddings.
Gallery build_gallery(EmbeddingModel& model, const Dataset& ds);

// Softmax over negative centroid distances (max-shifted for overflow safety).
std::vector<double> score(const double* embedding, const Gallery& g);

// argmax of score; ties resolve to the lowest class index. Equivalent to
// nearest centroid.
int predict(const double* embedding, const Gallery& g);

// max of score, in (0, 1].
double confidence(const double* embedding, const Gallery& g);

// Adds one new class built from shots that all carry the same, new video_id.
Gallery add_class(const Gallery& g, EmbeddingModel& model,
                  const std::vector<StreamSample>& shots);

// Rebuilds centroids for the classes present in target_ds (class order and
// other centroids preserved). Unknown video_ids raise an error.
Gallery replace_centroids(const Gallery& g, EmbeddingModel& model,
                          const Dataset& target_ds);

// Gallery file: one JSON header line (version "gallery/1", class_ids,
// shots_per_class, dim) followed by one space-separated decimal row per
// centroid.
void save_gallery(const Gallery& g, const std::string& path);
Gallery load_gallery(const std::string& path);

}  // namespace streamid

#endif  // STREAMID_GALLERY_HPP_
