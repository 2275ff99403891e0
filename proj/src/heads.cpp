#include "flashattn/heads.hpp"

#include <string>

#include "flashattn/errors.hpp"
#include "flashattn/flash.hpp"
#include "flashattn/random.hpp"

namespace flashattn {

HeadLayout HeadLayout::make(std::size_t n_q_heads, std::size_t n_kv_heads) {
  if (n_q_heads == 0 || n_kv_heads == 0) throw ConfigError("head layout: head counts must be >= 1");
  if (n_q_heads % n_kv_heads != 0)
    throw ConfigError("head layout: " + std::to_string(n_kv_heads) + " kv heads do not divide " +
                      std::to_string(n_q_heads) + " query heads");
  HeadLayout layout;
  layout.n_q_ = n_q_heads;
  layout.n_kv_ = n_kv_heads;
  return layout;
}

HeadSharing HeadLayout::sharing() const noexcept {
  if (n_kv_ == n_q_) return HeadSharing::kMha;
  if (n_kv_ == 1) return HeadSharing::kMqa;
  return HeadSharing::kGqa;
}

std::size_t HeadLayout::kv_head_index(std::size_t q_head) const {
  if (q_head >= n_q_)
    throw IndexError("query head " + std::to_string(q_head) + " out of range for " + std::to_string(n_q_) + " heads");
  return q_head / group_size();
}

BatchedTensors BatchedTensors::random(std::size_t batch_size, const HeadLayout& layout, std::size_t seq_len,
                                      std::size_t head_dim, std::uint64_t seed, double scale) {
  BatchedTensors t;
  t.batch_size = batch_size;
  t.layout = layout;
  t.seq_len = seq_len;
  t.head_dim = head_dim;
  NormalSampler rng(seed);
  const std::size_t nq = batch_size * layout.q_heads();
  const std::size_t nkv = batch_size * layout.kv_heads();
  for (std::size_t s = 0; s < nq; ++s) t.q.push_back(random_normal(seq_len, head_dim, rng, scale));
  for (std::size_t s = 0; s < nkv; ++s) t.k.push_back(random_normal(seq_len, head_dim, rng, scale));
  for (std::size_t s = 0; s < nkv; ++s) t.v.push_back(random_normal(seq_len, head_dim, rng, scale));
  for (std::size_t s = 0; s < nq; ++s) t.d_o.push_back(random_normal(seq_len, head_dim, rng, scale));
  return t;
}

std::size_t BatchedTensors::kv_storage_bytes() const noexcept {
  std::size_t bytes = 0;
  for (const auto* role : {&k, &v})
    for (const Matrix& m : *role) bytes += m.size() * sizeof(double);
  return bytes;
}

void BatchedTensors::check_inputs(const AttentionConfig& cfg) const {
  cfg.validate();
  if (seq_len != cfg.seq_len || head_dim != cfg.head_dim)
    throw DimensionError("batched tensors: N/d disagree with the attention config");
  if (q.size() != batch_size * layout.q_heads())
    throw DimensionError("batched tensors: expected " + std::to_string(batch_size * layout.q_heads()) +
                         " query matrices, have " + std::to_string(q.size()));
  if (k.size() != batch_size * layout.kv_heads() || v.size() != k.size())
    throw DimensionError("batched tensors: expected " + std::to_string(batch_size * layout.kv_heads()) +
                         " key and value matrices");
  for (const auto* role : {&q, &k, &v})
    for (const Matrix& m : *role)
      if (m.rows() != seq_len || m.cols() != head_dim) throw DimensionError("batched tensors: matrix is not N x d");
}

void BatchedTensors::check_forward_artifacts(const AttentionConfig& cfg) const {
  const std::size_t nq = batch_size * layout.q_heads();
  if (o.size() != nq || lse.size() != nq) throw ContractError("multihead backward: forward outputs O and L are missing");
  if (d_o.size() != nq) throw ContractError("multihead backward: dO is missing");
  for (std::size_t s = 0; s < nq; ++s) {
    if (o[s].rows() != cfg.seq_len || o[s].cols() != cfg.head_dim || lse[s].size() != cfg.seq_len)
      throw ContractError("multihead backward: forward outputs have the wrong shape");
    if (d_o[s].rows() != cfg.seq_len || d_o[s].cols() != cfg.head_dim)
      throw ContractError("multihead backward: dO has the wrong shape");
  }
}

void multihead_forward(BatchedTensors& batch, const AttentionConfig& cfg, CostCounters& counters) {
  batch.check_inputs(cfg);
  std::vector<Matrix> o;
  std::vector<RowVector> lse;
  for (std::size_t b = 0; b < batch.batch_size; ++b)
    for (std::size_t h = 0; h < batch.layout.q_heads(); ++h) {
      const std::size_t kv = batch.kv_slot_for_q(b, h);
      FlashForwardResult r = flash_forward(batch.q[batch.q_slot(b, h)], batch.k[kv], batch.v[kv], cfg, counters);
      o.push_back(std::move(r.o));
      lse.push_back(std::move(r.lse));
    }
  batch.o = std::move(o);
  batch.lse = std::move(lse);
}

void multihead_backward(BatchedTensors& batch, const AttentionConfig& cfg, CostCounters& counters) {
  batch.check_inputs(cfg);
  batch.check_forward_artifacts(cfg);
  const bool reduced = cfg.accum_precision == AccumPrecision::kReduced;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.head_dim;

  std::vector<Matrix> dq(batch.q.size());
  std::vector<Matrix> dk(batch.k.size(), Matrix(n, d));
  std::vector<Matrix> dv(batch.k.size(), Matrix(n, d));
  for (std::size_t b = 0; b < batch.batch_size; ++b)
    for (std::size_t h = 0; h < batch.layout.q_heads(); ++h) {
      const std::size_t qs = batch.q_slot(b, h);
      const std::size_t kv = batch.kv_slot_for_q(b, h);
      Gradients g = flash_backward(batch.q[qs], batch.k[kv], batch.v[kv], batch.o[qs], batch.d_o[qs], batch.lse[qs],
                                   cfg, counters);
      dq[qs] = std::move(g.dq);
      for (std::size_t e = 0; e < n * d; ++e) {
        const double sk = dk[kv].data()[e] + g.dk.data()[e];
        const double sv = dv[kv].data()[e] + g.dv.data()[e];
        dk[kv].data()[e] = reduced ? to_reduced(sk) : sk;
        dv[kv].data()[e] = reduced ? to_reduced(sv) : sv;
      }
      counters.nonmatmul_flops += 2 * n * d;
    }
  batch.dq = std::move(dq);
  batch.dk = std::move(dk);
  batch.dv = std::move(dv);
}

}  // namespace flashattn
