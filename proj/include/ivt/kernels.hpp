// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Dense f64 compute kernels. Every kernel has a `serial` reference and an
// OpenMP variant; both evaluate each output element with the same summation
// order, so their results are bitwise identical.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ivt::kernels {

// ---------------------------------------------------------------------------
// Threading and instrumentation

/// Caps OpenMP worker count. 0 leaves the runtime default.
void set_num_threads(int n);
int num_threads();
/// Applies IVT_THREADS from the environment if set. Returns the resulting cap.
int configure_threads_from_env();

/// Global multiply-accumulate counter. Kernels add their MAC count per call.
std::uint64_t mac_count();
void reset_mac_count();
void add_macs(std::uint64_t n);

// ---------------------------------------------------------------------------
// GEMM: C[m×n] (+)= op(A)·op(B), all row-major.
// op(A) is m×k (A stored k×m when trans_a), op(B) is k×n (B stored n×k when trans_b).

struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  const double* a = nullptr;
  const double* b = nullptr;
  double* c = nullptr;
  bool accumulate = false;
};

void gemm_serial(const GemmArgs& g);
void gemm(const GemmArgs& g);

// ---------------------------------------------------------------------------
// Grouped multi-head scaled dot-product attention.
//
// Query rows [q_begin, q_begin+q_count) attend to key rows
// [k_begin, k_begin+k_count) of the same group. Features are split into
// `heads` equal slices; each head uses 1/sqrt(d/heads) scaling.

struct AttentionGroup {
  std::size_t q_begin = 0, q_count = 0;
  std::size_t k_begin = 0, k_count = 0;
};

struct AttentionLayout {
  std::vector<AttentionGroup> groups;
  std::size_t heads = 1;
  /// Query j of a group only sees keys [0, j] of that group.
  bool causal = false;

  /// One group covering everything.
  static AttentionLayout single(std::size_t nq, std::size_t nk, std::size_t heads = 1);
  /// `count` consecutive groups of `rows` queries each attending to their own rows.
  static AttentionLayout blocks(std::size_t count, std::size_t rows, std::size_t heads = 1);

  /// Offset of the probability table for (group, head) inside the flat buffer.
  std::vector<std::size_t> prob_offsets() const;
  std::size_t prob_size() const;
  /// True when query ranges and key ranges are pairwise disjoint across groups.
  bool disjoint() const;
};

struct AttentionShapes {
  std::size_t nq = 0, nk = 0, d = 0;
};

/// O[nq×d] = softmax(Q·Kᵀ/sqrt(d_head))·V per group and head; P receives the
/// probabilities laid out as in AttentionLayout::prob_offsets.
void attention_forward_serial(const AttentionLayout& layout, const AttentionShapes& s,
                              const double* q, const double* k, const double* v, double* o,
                              double* p);
void attention_forward(const AttentionLayout& layout, const AttentionShapes& s, const double* q,
                       const double* k, const double* v, double* o, double* p);

/// Accumulates into dq, dk, dv (any may be null).
void attention_backward_serial(const AttentionLayout& layout, const AttentionShapes& s,
                               const double* q, const double* k, const double* v,
                               const double* p, const double* dout, double* dq, double* dk,
                               double* dv);
void attention_backward(const AttentionLayout& layout, const AttentionShapes& s, const double* q,
                        const double* k, const double* v, const double* p, const double* dout,
                        double* dq, double* dk, double* dv);

// ---------------------------------------------------------------------------
// 2D convolution, stride 1, zero padding ksize/2, batched NCHW.

struct ConvShapes {
  std::size_t batch = 1, in_ch = 0, out_ch = 0, height = 0, width = 0, ksize = 3;
};

void conv2d_forward_serial(const ConvShapes& s, const double* x, const double* w, const double* b,
                           double* y);
void conv2d_forward(const ConvShapes& s, const double* x, const double* w, const double* b,
                    double* y);

/// Accumulates into dx, dw, db (any may be null).
void conv2d_backward_serial(const ConvShapes& s, const double* x, const double* w,
                            const double* dy, double* dx, double* dw, double* db);
void conv2d_backward(const ConvShapes& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db);

}  // namespace ivt::kernels
