#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "streamid/backbone.hpp"
#include "streamid/rng.hpp"

using namespace streamid;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.in_channels = 2;
  cfg.input_len = 24;
  cfg.block_channels = {4, 8, 16};
  cfg.kernel_size = 7;
  cfg.head_hidden = 16;
  cfg.embedding_dim = 8;
  return cfg;
}

std::vector<double> random_input(const BackboneConfig& cfg, int batch,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(batch) * cfg.in_channels *
                        cfg.input_len);
  for (auto& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("default configuration parameter count is pinned") {
  // closed-form count for the 128/256/512 two-conv blocks with the 1024 head:
  // convs: (2*128*7+128) + (128*128*7+128)
  //      + (128*256*7+256) + (256*256*7+256)
  //      + (256*512*7+512) + (512*512*7+512)
  // bn affine: 2*(128+128+256+256+512+512)
  // head: (512*1024+1024) + (1024*1024+1024)
  long long expect = 0;
  const int chans[4] = {2, 128, 256, 512};
  for (int blk = 1; blk <= 3; ++blk) {
    expect += static_cast<long long>(chans[blk]) * chans[blk - 1] * 7 + chans[blk];
    expect += static_cast<long long>(chans[blk]) * chans[blk] * 7 + chans[blk];
    expect += 4LL * chans[blk];  // two batch norms, gamma+beta each
  }
  expect += 512LL * 1024 + 1024;
  expect += 1024LL * 1024 + 1024;
  CHECK(expect == 5137408);  // guards accidental architecture drift

  EmbeddingModel model(BackboneConfig{}, 1);
  CHECK(model.parameter_count() == static_cast<std::size_t>(expect));
}

TEST_CASE("forward returns finite embeddings of the right shape") {
  EmbeddingModel model(tiny_config(), 2);
  const std::vector<double> zeros(
      static_cast<std::size_t>(2) * tiny_config().input_len, 0.0);
  const auto emb = model.forward(zeros, 1, false);
  REQUIRE(emb.size() == 8);
  for (const double v : emb) CHECK(std::isfinite(v));
}

TEST_CASE("forward rejects shape mismatches") {
  EmbeddingModel model(tiny_config(), 2);
  CHECK_THROWS(model.forward(std::vector<double>(7, 0.0), 1, false));
}

TEST_CASE("eval-mode forward is batch composition independent") {
  const auto cfg = tiny_config();
  EmbeddingModel model(cfg, 3);
  // give the running stats some structure first
  auto warm = random_input(cfg, 8, 99);
  model.forward(warm, 8, true);

  const auto batch = random_input(cfg, 32, 100);
  const auto all = model.forward(batch, 32, false);
  const int feat = cfg.in_channels * cfg.input_len;
  for (const int i : {0, 7, 31}) {
    const std::vector<double> one(batch.begin() + static_cast<std::size_t>(i) * feat,
                                  batch.begin() + static_cast<std::size_t>(i + 1) * feat);
    const auto solo = model.forward(one, 1, false);
    for (int d = 0; d < cfg.embedding_dim; ++d) {
      CHECK(std::abs(solo[static_cast<std::size_t>(d)] -
                     all[static_cast<std::size_t>(i) * cfg.embedding_dim + d]) <
            1e-5);
    }
  }
}

// Hand-rolled layer-by-layer forward, independent of the model internals.
namespace {

std::vector<double> reference_forward(EmbeddingModel& model,
                                      const std::vector<double>& x, int batch) {
  const auto cfg = model.config();
  const int k = cfg.kernel_size;
  const int pad = (k - 1) / 2;

  // gather parameters and running stats by name
  std::map<std::string, std::vector<double>> p;
  for (const auto& v : model.parameters()) {
    p[v.name] = std::vector<double>(v.value, v.value + v.size);
  }
  for (const auto& v : model.running_stats()) {
    p[v.name] = std::vector<double>(v.value, v.value + v.size);
  }

  std::vector<double> cur = x;
  int ch = cfg.in_channels;
  int len = cfg.input_len;
  int conv_i = 0;
  int bn_i = 0;
  for (std::size_t blk = 0; blk < cfg.block_channels.size(); ++blk) {
    const int out_ch = cfg.block_channels[blk];
    for (int c = 0; c < cfg.convs_per_block; ++c) {
      const auto& w = p["conv" + std::to_string(conv_i) + ".weight"];
      const auto& b = p["conv" + std::to_string(conv_i) + ".bias"];
      std::vector<double> y(static_cast<std::size_t>(batch) * out_ch * len, 0.0);
      for (int bi = 0; bi < batch; ++bi) {
        for (int oc = 0; oc < out_ch; ++oc) {
          for (int t = 0; t < len; ++t) {
            double acc = b[static_cast<std::size_t>(oc)];
            for (int ic = 0; ic < ch; ++ic) {
              for (int kk = 0; kk < k; ++kk) {
                const int src = t + kk - pad;
                if (src < 0 || src >= len) continue;
                acc += w[(static_cast<std::size_t>(oc) * ch + ic) * k + kk] *
                       cur[(static_cast<std::size_t>(bi) * ch + ic) * len + src];
              }
            }
            y[(static_cast<std::size_t>(bi) * out_ch + oc) * len + t] = acc;
          }
        }
      }
      // conv -> relu -> bn (eval mode, running stats)
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
      const auto& gamma = p["bn" + std::to_string(bn_i) + ".gamma"];
      const auto& beta = p["bn" + std::to_string(bn_i) + ".beta"];
      const auto& rm = p["bn" + std::to_string(bn_i) + ".running_mean"];
      const auto& rv = p["bn" + std::to_string(bn_i) + ".running_var"];
      for (int bi = 0; bi < batch; ++bi) {
        for (int oc = 0; oc < out_ch; ++oc) {
          for (int t = 0; t < len; ++t) {
            auto& v = y[(static_cast<std::size_t>(bi) * out_ch + oc) * len + t];
            v = gamma[static_cast<std::size_t>(oc)] *
                    (v - rm[static_cast<std::size_t>(oc)]) /
                    std::sqrt(rv[static_cast<std::size_t>(oc)] + 1e-5) +
                beta[static_cast<std::size_t>(oc)];
          }
        }
      }
      cur = std::move(y);
      ch = out_ch;
      ++conv_i;
      ++bn_i;
    }
    if (blk + 1 < cfg.block_channels.size()) {
      const int lout = len / 2;
      std::vector<double> y(static_cast<std::size_t>(batch) * ch * lout);
      for (int bi = 0; bi < batch; ++bi) {
        for (int c = 0; c < ch; ++c) {
          for (int t = 0; t < lout; ++t) {
            y[(static_cast<std::size_t>(bi) * ch + c) * lout + t] =
                std::max(cur[(static_cast<std::size_t>(bi) * ch + c) * len + 2 * t],
                         cur[(static_cast<std::size_t>(bi) * ch + c) * len + 2 * t + 1]);
          }
        }
      }
      cur = std::move(y);
      len = lout;
    } else {
      std::vector<double> y(static_cast<std::size_t>(batch) * ch);
      for (int bi = 0; bi < batch; ++bi) {
        for (int c = 0; c < ch; ++c) {
          double acc = 0.0;
          for (int t = 0; t < len; ++t) {
            acc += cur[(static_cast<std::size_t>(bi) * ch + c) * len + t];
          }
          y[static_cast<std::size_t>(bi) * ch + c] = acc / len;
        }
      }
      cur = std::move(y);
      len = 1;
    }
  }
  auto dense = [&](const std::vector<double>& in, int n_in, int n_out,
                   const std::string& name) {
    const auto& w = p[name + ".weight"];
    const auto& b = p[name + ".bias"];
    std::vector<double> y(static_cast<std::size_t>(batch) * n_out);
    for (int bi = 0; bi < batch; ++bi) {
      for (int o = 0; o < n_out; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int i = 0; i < n_in; ++i) {
          acc += w[static_cast<std::size_t>(o) * n_in + i] *
                 in[static_cast<std::size_t>(bi) * n_in + i];
        }
        y[static_cast<std::size_t>(bi) * n_out + o] = acc;
      }
    }
    return y;
  };
  cur = dense(cur, ch, cfg.head_hidden, "dense0");
  for (auto& v : cur) v = v > 0.0 ? v : 0.0;
  return dense(cur, cfg.head_hidden, cfg.embedding_dim, "dense1");
}

}  // namespace

TEST_CASE("eval forward matches an independently hand-rolled reference") {
  const auto cfg = tiny_config();
  EmbeddingModel model(cfg, 17);
  // warm up the running stats so the reference exercises real values
  auto warm = random_input(cfg, 6, 5);
  model.forward(warm, 6, true);

  const int batch = 3;
  const auto x = random_input(cfg, batch, 8);
  const auto got = model.forward(x, batch, false);
  const auto want = reference_forward(model, x, batch);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("parameter gradients match central finite differences") {
  auto cfg = tiny_config();
  cfg.input_len = 16;
  EmbeddingModel model(cfg, 23);
  const int batch = 3;
  const auto x = random_input(cfg, batch, 31);

  // scalar objective: fixed random projection of the embeddings
  Rng prng(41);
  std::vector<double> proj(static_cast<std::size_t>(batch) * cfg.embedding_dim);
  for (auto& v : proj) v = prng.normal();
  auto objective = [&]() {
    const auto emb = model.forward(x, batch, true);
    double s = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) s += emb[i] * proj[i];
    return s;
  };

  objective();
  model.zero_grad();
  model.backward(proj);

  const double h = 1e-5;
  std::size_t checked = 0;
  for (auto& view : model.parameters()) {
    for (std::size_t i = 0; i < view.size; i += std::max<std::size_t>(1, view.size / 5)) {
      const double keep = view.value[i];
      view.value[i] = keep + h;
      const double up = objective();
      view.value[i] = keep - h;
      const double down = objective();
      view.value[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = view.grad[i];
      const double rel = std::abs(an - fd) / std::max(std::abs(an) + std::abs(fd), 1e-4);
      CHECK(rel < 1e-3);
      ++checked;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("shift distance identities") {
  const auto cfg = tiny_config();
  EmbeddingModel model(cfg, 3);
  Rng rng(4);
  std::vector<double> features(static_cast<std::size_t>(cfg.in_channels) *
                               cfg.input_len);
  for (auto& v : features) v = rng.normal();

  CHECK(embedding_shift_distance(model, features, 0) == 0.0);
  CHECK(embedding_shift_distance(model, features, cfg.input_len) == 0.0);

  const auto distances = shift_sensitivity(model, features, 5);
  REQUIRE(distances.size() == 5);
  for (const double d : distances) {
    CHECK(std::isfinite(d));
    CHECK(d >= 0.0);
  }
  CHECK_THROWS(shift_sensitivity(model, features, cfg.input_len));
}

TEST_CASE("checkpoint round trip preserves behavior and validates config") {
  const auto cfg = tiny_config();
  EmbeddingModel model(cfg, 55);
  auto warm = random_input(cfg, 4, 5);
  model.forward(warm, 4, true);

  const auto dir = fs::temp_directory_path() / "streamid_backbone_test";
  fs::create_directories(dir);
  const auto path = (dir / "model.ckpt").string();
  model.save(path);

  EmbeddingModel back = EmbeddingModel::load(path);
  CHECK(back.config() == cfg);
  const auto x = random_input(cfg, 2, 6);
  CHECK(model.forward(x, 2, false) == back.forward(x, 2, false));

  CHECK_THROWS_WITH_AS(EmbeddingModel::load("/nonexistent/ckpt"),
                       doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("batch norm order is configurable and changes the forward") {
  auto cfg = tiny_config();
  EmbeddingModel a(cfg, 7);
  cfg.bn_order = BnOrder::kConvBnRelu;
  EmbeddingModel b(cfg, 7);
  const auto x = random_input(tiny_config(), 2, 9);
  auto xa = x;
  const auto ea = a.forward(xa, 2, true);
  const auto eb = b.forward(xa, 2, true);
  CHECK(ea != eb);
}

TEST_CASE("config validation rejects bad shapes") {
  BackboneConfig cfg = tiny_config();
  cfg.kernel_size = 6;
  CHECK_THROWS(EmbeddingModel(cfg, 1));
  cfg = tiny_config();
  cfg.block_channels = {8, 8};
  CHECK_THROWS(EmbeddingModel(cfg, 1));
  cfg = tiny_config();
  cfg.embedding_dim = 0;
  CHECK_THROWS(EmbeddingModel(cfg, 1));
}
