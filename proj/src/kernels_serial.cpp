#include "streamid/kernels.hpp"

#include <algorithm>
#include <cmath>

// Plain-loop reference twins of the OpenMP kernels. Kept deliberately
// pragma-free with the same per-element accumulation order, so tests can
// assert exact equality against the parallel versions.

namespace streamid::kernels::serial {


void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int batch, int cin, int cout, int len, int k) {
  const int pad = (k - 1) / 2;
  for (int b = 0; b < batch; ++b) {
    for (int oc = 0; oc < cout; ++oc) {
      double* yrow = y + (static_cast<std::size_t>(b) * cout + oc) * len;
      const double bv = bias[oc];
      for (int t = 0; t < len; ++t) yrow[t] = bv;
      for (int ic = 0; ic < cin; ++ic) {
        const double* xrow = x + (static_cast<std::size_t>(b) * cin + ic) * len;
        const double* wrow = w + (static_cast<std::size_t>(oc) * cin + ic) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double wv = wrow[kk];
          const int off = kk - pad;
          const int t0 = std::max(0, -off);
          const int t1 = std::min(len, len - off);
          for (int t = t0; t < t1; ++t) yrow[t] += wv * xrow[t + off];
        }
      }
    }
  }
}

void conv1d_backward_data(const double* dy, const double* w, double* dx,
                          int batch, int cin, int cout, int len, int k) {
  const int pad = (k - 1) / 2;
  for (int b = 0; b < batch; ++b) {
    for (int ic = 0; ic < cin; ++ic) {
      double* dxrow = dx + (static_cast<std::size_t>(b) * cin + ic) * len;
      for (int t = 0; t < len; ++t) dxrow[t] = 0.0;
      for (int oc = 0; oc < cout; ++oc) {
        const double* dyrow =
            dy + (static_cast<std::size_t>(b) * cout + oc) * len;
        const double* wrow = w + (static_cast<std::size_t>(oc) * cin + ic) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double wv = wrow[kk];
          const int off = pad - kk;
          const int t0 = std::max(0, -off);
          const int t1 = std::min(len, len - off);
          for (int t = t0; t < t1; ++t) dxrow[t] += wv * dyrow[t + off];
        }
      }
    }
  }
}

void conv1d_backward_params(const double* dy, const double* x, double* dw,
                            double* db, int batch, int cin, int cout, int len,
                            int k) {
  const int pad = (k - 1) / 2;
  for (int oc = 0; oc < cout; ++oc) {
    for (int ic = 0; ic < cin; ++ic) {
      double* dwrow = dw + (static_cast<std::size_t>(oc) * cin + ic) * k;
      for (int kk = 0; kk < k; ++kk) {
        const int off = kk - pad;
        const int t0 = std::max(0, -off);
        const int t1 = std::min(len, len - off);
        double acc = 0.0;
        for (int b = 0; b < batch; ++b) {
          const double* dyrow =
              dy + (static_cast<std::size_t>(b) * cout + oc) * len;
          const double* xrow =
              x + (static_cast<std::size_t>(b) * cin + ic) * len;
          for (int t = t0; t < t1; ++t) acc += dyrow[t] * xrow[t + off];
        }
        dwrow[kk] += acc;
      }
    }
  }
  for (int oc = 0; oc < cout; ++oc) {
    double acc = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double* dyrow = dy + (static_cast<std::size_t>(b) * cout + oc) * len;
      for (int t = 0; t < len; ++t) acc += dyrow[t];
    }
    db[oc] += acc;
  }
}

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, int batch, int in, int out) {
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < out; ++o) {
      const double* xrow = x + static_cast<std::size_t>(b) * in;
      const double* wrow = w + static_cast<std::size_t>(o) * in;
      double acc = bias[o];
      for (int i = 0; i < in; ++i) acc += wrow[i] * xrow[i];
      y[static_cast<std::size_t>(b) * out + o] = acc;
    }
  }
}

void dense_backward_data(const double* dy, const double* w, double* dx,
                         int batch, int in, int out) {
  for (int b = 0; b < batch; ++b) {
    double* dxrow = dx + static_cast<std::size_t>(b) * in;
    for (int i = 0; i < in; ++i) dxrow[i] = 0.0;
    const double* dyrow = dy + static_cast<std::size_t>(b) * out;
    for (int o = 0; o < out; ++o) {
      const double v = dyrow[o];
      const double* wrow = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dxrow[i] += v * wrow[i];
    }
  }
}

void dense_backward_params(const double* dy, const double* x, double* dw,
                           double* db, int batch, int in, int out) {
  for (int o = 0; o < out; ++o) {
    double* dwrow = dw + static_cast<std::size_t>(o) * in;
    double bacc = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double v = dy[static_cast<std::size_t>(b) * out + o];
      const double* xrow = x + static_cast<std::size_t>(b) * in;
      for (int i = 0; i < in; ++i) dwrow[i] += v * xrow[i];
      bacc += v;
    }
    db[o] += bacc;
  }
}

void bn_stats(const double* x, int batch, int ch, int len, double* mean,
              double* var) {
  const double n = static_cast<double>(batch) * len;
  for (int c = 0; c < ch; ++c) {
    double s = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double* row = x + (static_cast<std::size_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) s += row[t];
    }
    const double m = s / n;
    double v = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double* row = x + (static_cast<std::size_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) {
        const double d = row[t] - m;
        v += d * d;
      }
    }
    mean[c] = m;
    var[c] = v / n;
  }
}

void bn_apply(const double* x, double* y, double* xhat, const double* mean,
              const double* var, const double* gamma, const double* beta,
              double eps, int batch, int ch, int len) {
  for (int c = 0; c < ch; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    const double m = mean[c];
    const double g = gamma[c];
    const double bt = beta[c];
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) {
        const double xh = (x[base + t] - m) * inv;
        if (xhat != nullptr) xhat[base + t] = xh;
        y[base + t] = g * xh + bt;
      }
    }
  }
}

void bn_backward(const double* dy, const double* xhat, const double* gamma,
                 const double* var, double eps, double* dx, double* dgamma,
                 double* dbeta, int batch, int ch, int len) {
  const double n = static_cast<double>(batch) * len;
  for (int c = 0; c < ch; ++c) {
    double s1 = 0.0;
    double s2 = 0.0;
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) {
        s1 += dy[base + t];
        s2 += dy[base + t] * xhat[base + t];
      }
    }
    dgamma[c] += s2;
    dbeta[c] += s1;
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    const double g = gamma[c];
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) {
        dx[base + t] =
            g * inv * (dy[base + t] - s1 / n - xhat[base + t] * s2 / n);
      }
    }
  }
}

void relu_forward(const double* x, double* y, std::size_t n) {
  const long long nn = static_cast<long long>(n);
  for (long long i = 0; i < nn; ++i) {
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
}

void relu_backward(const double* dy, const double* y, double* dx,
                   std::size_t n) {
  const long long nn = static_cast<long long>(n);
  for (long long i = 0; i < nn; ++i) {
    dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
  }
}

void maxpool2_forward(const double* x, double* y, int* argmax, int batch,
                      int ch, int len) {
  const int lout = len / 2;
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      const double* xrow = x + (static_cast<std::size_t>(b) * ch + c) * len;
      double* yrow = y + (static_cast<std::size_t>(b) * ch + c) * lout;
      int* arow = argmax + (static_cast<std::size_t>(b) * ch + c) * lout;
      for (int t = 0; t < lout; ++t) {
        const int i0 = 2 * t;
        if (xrow[i0 + 1] > xrow[i0]) {
          yrow[t] = xrow[i0 + 1];
          arow[t] = i0 + 1;
        } else {
          yrow[t] = xrow[i0];
          arow[t] = i0;
        }
      }
    }
  }
}

void maxpool2_backward(const double* dy, const int* argmax, double* dx,
                       int batch, int ch, int len) {
  const int lout = len / 2;
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      double* dxrow = dx + (static_cast<std::size_t>(b) * ch + c) * len;
      const double* dyrow = dy + (static_cast<std::size_t>(b) * ch + c) * lout;
      const int* arow = argmax + (static_cast<std::size_t>(b) * ch + c) * lout;
      for (int t = 0; t < len; ++t) dxrow[t] = 0.0;
      for (int t = 0; t < lout; ++t) dxrow[arow[t]] += dyrow[t];
    }
  }
}

void global_avgpool_forward(const double* x, double* y, int batch, int ch,
                            int len) {
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      const double* xrow = x + (static_cast<std::size_t>(b) * ch + c) * len;
      double acc = 0.0;
      for (int t = 0; t < len; ++t) acc += xrow[t];
      y[static_cast<std::size_t>(b) * ch + c] = acc / len;
    }
  }
}

void global_avgpool_backward(const double* dy, double* dx, int batch, int ch,
                             int len) {
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      const double g = dy[static_cast<std::size_t>(b) * ch + c] / len;
      double* dxrow = dx + (static_cast<std::size_t>(b) * ch + c) * len;
      for (int t = 0; t < len; ++t) dxrow[t] = g;
    }
  }
}

void pairwise_distances(const double* emb, double* dist, int batch, int dim) {
  for (int i = 0; i < batch; ++i) {
    dist[static_cast<std::size_t>(i) * batch + i] = 0.0;
    const double* ei = emb + static_cast<std::size_t>(i) * dim;
    for (int j = i + 1; j < batch; ++j) {
      const double* ej = emb + static_cast<std::size_t>(j) * dim;
      double acc = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = ei[d] - ej[d];
        acc += diff * diff;
      }
      const double v = std::sqrt(acc);
      dist[static_cast<std::size_t>(i) * batch + j] = v;
      dist[static_cast<std::size_t>(j) * batch + i] = v;
    }
  }
}

}  // namespace streamid::kernels::serial
