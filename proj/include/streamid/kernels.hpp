#ifndef STREAMID_KERNELS_HPP_
#define STREAMID_KERNELS_HPP_

#include <cstddef>

// Compute kernels for the 1D-CNN and distance math. The primary entry points
// in streamid::kernels are OpenMP-parallel; streamid::kernels::serial holds
// plain-loop reference twins with identical per-element accumulation order,
// so the two produce bit-identical results (asserted in tests, timed in
// bench_kernels).
//
// Layout conventions: activations are row-major [batch][channels][len];
// conv weights are [out_ch][in_ch][k]; dense weights are [out][in].
// All convolutions use zero "same" padding; k must be odd.
// Backward kernels accumulate into their dw/db outputs and overwrite dx.

namespace streamid::kernels {

void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int batch, int cin, int cout, int len, int k);
void conv1d_backward_data(const double* dy, const double* w, double* dx,
                          int batch, int cin, int cout, int len, int k);
void conv1d_backward_params(const double* dy, const double* x, double* dw,
                            double* db, int batch, int cin, int cout, int len,
                            int k);

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, int batch, int in, int out);
void dense_backward_data(const double* dy, const double* w, double* dx,
                         int batch, int in, int out);
void dense_backward_params(const double* dy, const double* x, double* dw,
                           double* db, int batch, int in, int out);

// Per-channel mean and population variance over batch * len positions.
void bn_stats(const double* x, int batch, int ch, int len, double* mean,
              double* var);
// y = gamma * xhat + beta with xhat = (x - mean) / sqrt(var + eps).
// xhat may be null when the normalized values are not needed (eval mode).
void bn_apply(const double* x, double* y, double* xhat, const double* mean,
              const double* var, const double* gamma, const double* beta,
              double eps, int batch, int ch, int len);
void bn_backward(const double* dy, const double* xhat, const double* gamma,
                 const double* var, double eps, double* dx, double* dgamma,
                 double* dbeta, int batch, int ch, int len);

void relu_forward(const double* x, double* y, std::size_t n);
void relu_backward(const double* dy, const double* y, double* dx,
                   std::size_t n);

// Window 2, stride 2; odd trailing element is dropped. argmax stores the
// absolute input position that won each window (ties -> earlier position).
void maxpool2_forward(const double* x, double* y, int* argmax, int batch,
                      int ch, int len);
void maxpool2_backward(const double* dy, const int* argmax, double* dx,
                       int batch, int ch, int len);

void global_avgpool_forward(const double* x, double* y, int batch, int ch,
                            int len);
void global_avgpool_backward(const double* dy, double* dx, int batch, int ch,
                             int len);

// Symmetric batch * batch Euclidean distance matrix, zero diagonal.
void pairwise_distances(const double* emb, double* dist, int batch, int dim);

namespace serial {

void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int batch, int cin, int cout, int len, int k);
void conv1d_backward_data(const double* dy, const double* w, double* dx,
                          int batch, int cin, int cout, int len, int k);
void conv1d_backward_params(const double* dy, const double* x, double* dw,
                            double* db, int batch, int cin, int cout, int len,
                            int k);
void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, int batch, int in, int out);
void dense_backward_data(const double* dy, const double* w, double* dx,
                         int batch, int in, int out);
void dense_backward_params(const double* dy, const double* x, double* dw,
                           double* db, int batch, int in, int out);
void bn_stats(const double* x, int batch, int ch, int len, double* mean,
              double* var);
void bn_apply(const double* x, double* y, double* xhat, const double* mean,
              const double* var, const double* gamma, const double* beta,
              double eps, int batch, int ch, int len);
void bn_backward(const double* dy, const double* xhat, const double* gamma,
                 const double* var, double eps, double* dx, double* dgamma,
                 double* dbeta, int batch, int ch, int len);
void relu_forward(const double* x, double* y, std::size_t n);
void relu_backward(const double* dy, const double* y, double* dx,
                   std::size_t n);
void maxpool2_forward(const double* x, double* y, int* argmax, int batch,
                      int ch, int len);
void maxpool2_backward(const double* dy, const int* argmax, double* dx,
                       int batch, int ch, int len);
void global_avgpool_forward(const double* x, double* y, int batch, int ch,
                            int len);
void global_avgpool_backward(const double* dy, double* dx, int batch, int ch,
                             int len);
void pairwise_distances(const double* emb, double* dist, int batch, int dim);

}  // namespace serial

}  // namespace streamid::kernels

#endif  // STREAMID_KERNELS_HPP_
