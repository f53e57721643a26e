#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctdg/encoders.hpp"
#include "ctdg/nn/tape.hpp"

namespace ctdg {

enum class DecoderKind { linear, gat, gatv2, trans };
DecoderKind parse_decoder(std::string_view name);
std::string_view decoder_name(DecoderKind k);

struct SamplerConfig {
  DecoderKind decoder = DecoderKind::linear;
  std::size_t n = 10;
  EncoderConfig enc;  // enc.m is the scope budget
  std::size_t d_att = 16;
  // gat/gatv2 score the mixer output by default; false feeds them the raw
  // neighbor embeddings instead.
  bool attention_on_mixer = true;
  void validate() const;
};

// Policy over the m candidate slots of each of B neighborhoods.
struct PolicyBatch {
  std::size_t B = 0;
  std::size_t m = 0;
  nn::Var log_q;                     // [B, m]; 0 on masked slots
  std::vector<double> q;             // B * m; exactly 0 on masked slots
  std::vector<double> log_q_export;  // B * m; -inf on masked slots
  std::vector<std::uint8_t> mask;    // B * m
  std::vector<std::size_t> valid;    // per row
};

// Chosen slots per row, ascending slot index (= most recent first).
struct Selection {
  std::size_t n = 0;
  std::vector<std::int32_t> slots;  // B * n, -1 where the row has fewer picks
  std::vector<std::uint8_t> scored;  // per row: valid > n, so the choice carries signal
  std::size_t count(std::size_t row) const;
};

// Sequential renormalized draws of n distinct slots from q (length m).
// Returns fewer when fewer than n slots have positive mass.
std::vector<std::int32_t> sample_without_replacement(std::span<const double> q, std::size_t n, RngStream& rng);

template <typename T>
class AdaptiveSampler {
 public:
  AdaptiveSampler(const SamplerConfig& cfg, std::size_t d_v, std::size_t d_e, nn::ParamStore<T>& store,
                  RngStream& init, const std::string& prefix = "sampler.");

  const SamplerConfig& config() const noexcept { return cfg_; }
  const NeighborEncoder<T>& encoder() const noexcept { return enc_; }
  std::size_t m() const noexcept { return cfg_.enc.m; }

  // One mixer layer: channel MLP then token MLP, each pre-normed with a
  // residual, padded rows zeroed after each stage. z is [B, m, d_enc].
  nn::Var mixer_transform(nn::Tape<T>& tape, nn::ParamStore<T>& store, nn::Var z,
                          std::span<const std::uint8_t> mask) const;

  // Logits -> masked log-softmax. Z is the mixer output, z_raw the encoder
  // output, z_v the [B, d_target] target embedding.
  PolicyBatch decode_policy(nn::Tape<T>& tape, nn::ParamStore<T>& store, nn::Var Z, nn::Var z_raw, nn::Var z_v,
                            std::span<const std::uint8_t> mask, std::span<const std::size_t> valid) const;

  // Encoder + mixer + decoder for a batch of neighborhoods.
  PolicyBatch policy(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g,
                     std::span<const NodeId> targets, std::span<const double> times,
                     std::span<const Neighborhood> nbhds) const;

  Selection sample(const PolicyBatch& p, RngStream& rng) const;
  // Top-n slots by q (ties to the lower slot), used at evaluation time.
  Selection greedy(const PolicyBatch& p) const;
  // Rows whose valid count is <= n take every valid slot.
  Selection take_all(const PolicyBatch& p) const;

  // [B, n] taped log q of the selected slots (0 where no pick).
  nn::Var selected_log_q(nn::Tape<T>& tape, const PolicyBatch& p, const Selection& s) const;

 private:
  SamplerConfig cfg_;
  NeighborEncoder<T> enc_;
  std::string prefix_;
  std::string name(const char* s) const { return prefix_ + s; }
};

// How the TGAT sample-loss coefficient is formed.
//  chain:   c_j = sum_d g_d (tau_j / lambda) (V_jd - mu_d / lambda)
//           (the quotient rule applied to h = mu / lambda)
//  printed: c_j = (1/n) sum_d g_d (tau_j V_jd / lambda^3 + mu_d tau_j / lambda^4)
enum class TgatLossForm { chain, printed };

// Both sample losses detach every coefficient input before combining them,
// so only the log-probabilities carry gradient. Shapes: g [B, d],
// tau [B, n], V [B, n, d], sel_log_q [B, n]; rows with row_weight 0 are
// skipped.
template <typename T>
nn::Var sample_loss_tgat(nn::Tape<T>& tape, nn::Var g, nn::Var tau, nn::Var V, nn::Var sel_log_q,
                         std::span<const std::uint8_t> row_weight, TgatLossForm form = TgatLossForm::chain);

// c_j = (1/n) sum_k g_k w'_jk mu_jk with w_prime, mu [B, n, d].
template <typename T>
nn::Var sample_loss_graphmixer(nn::Tape<T>& tape, nn::Var g, nn::Var w_prime, nn::Var mu, nn::Var sel_log_q,
                               std::span<const std::uint8_t> row_weight);

// Backward of the sample loss and one Adam step over the sampler store.
template <typename T>
void update_sampler(nn::Tape<T>& tape, nn::Var loss, nn::ParamStore<T>& store, double lr);

}  // namespace ctdg
