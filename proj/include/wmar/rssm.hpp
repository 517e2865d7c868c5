#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmar/binio.hpp"
#include "wmar/errors.hpp"
#include "wmar/nn.hpp"
#include "wmar/replay.hpp"
#include "wmar/rng.hpp"
#include "wmar/tape.hpp"

namespace wmar {

struct RssmConfig {
  int obs_width = 0;
  int action_count = 0;
  int latent_units = 8;
  int latent_classes = 8;
  int deter_width = 128;
  int embed_width = 128;
  int hidden_width = 128;
  int hidden_layers = 2;
  double free_bits = 1.0;
  double beta_dyn = 0.5;
  double beta_rep = 0.1;

  int latent_width() const { return latent_units * latent_classes; }
  int state_width() const { return deter_width + latent_width(); }

  void validate() const {
    if (obs_width < 1) throw ConfigError("rssm: obs_width must be positive");
    if (action_count < 2) throw ConfigError("rssm: action_count must be at least 2");
    if (latent_units < 1 || latent_classes < 2) throw ConfigError("rssm: bad latent shape");
    if (deter_width < 1 || embed_width < 1 || hidden_width < 1 || hidden_layers < 1)
      throw ConfigError("rssm: widths and layer count must be positive");
    if (free_bits < 0 || beta_dyn < 0 || beta_rep < 0)
      throw ConfigError("rssm: loss coefficients must be non-negative");
  }

  void save(BinWriter& w) const {
    w.i32(obs_width);
    w.i32(action_count);
    w.i32(latent_units);
    w.i32(latent_classes);
    w.i32(deter_width);
    w.i32(embed_width);
    w.i32(hidden_width);
    w.i32(hidden_layers);
    w.f64(free_bits);
    w.f64(beta_dyn);
    w.f64(beta_rep);
  }

  bool operator==(const RssmConfig& o) const {
    return obs_width == o.obs_width && action_count == o.action_count &&
           latent_units == o.latent_units && latent_classes == o.latent_classes &&
           deter_width == o.deter_width && embed_width == o.embed_width &&
           hidden_width == o.hidden_width && hidden_layers == o.hidden_layers &&
           free_bits == o.free_bits && beta_dyn == o.beta_dyn && beta_rep == o.beta_rep;
  }

  static RssmConfig loaded(BinReader& r) {
    RssmConfig c;
    c.obs_width = r.i32();
    c.action_count = r.i32();
    c.latent_units = r.i32();
    c.latent_classes = r.i32();
    c.deter_width = r.i32();
    c.embed_width = r.i32();
    c.hidden_width = r.i32();
    c.hidden_layers = r.i32();
    c.free_bits = r.f64();
    c.beta_dyn = r.f64();
    c.beta_rep = r.f64();
    return c;
  }
};

// One training minibatch laid out per time step: L matrices of batch rows.
// Actions are one-hot and zeroed on is_first rows; the continue target for
// step j is 1 unless step j+1 starts a new episode, and the final position
// carries zero weight because its successor is outside the window.
template <typename T>
struct SequenceBatch {
  int batch = 0;
  int length = 0;
  std::vector<Mat<T>> obs;
  std::vector<Mat<T>> action_onehot;
  std::vector<Mat<T>> reward;
  std::vector<std::vector<uint8_t>> is_first;
  std::vector<Mat<T>> cont_target;
  std::vector<Mat<T>> cont_weight;
};

template <typename T>
SequenceBatch<T> make_sequence_batch(const Minibatch& mb, int obs_width, int action_count) {
  if (mb.windows.empty()) throw RuntimeError("sequence batch: empty minibatch");
  SequenceBatch<T> sb;
  sb.batch = static_cast<int>(mb.windows.size());
  sb.length = static_cast<int>(mb.windows[0].size());
  if (sb.length < 1) throw RuntimeError("sequence batch: empty window");
  for (const auto& w : mb.windows) {
    if (static_cast<int>(w.size()) != sb.length)
      throw RuntimeError("sequence batch: ragged windows");
  }
  for (int j = 0; j < sb.length; ++j) {
    Mat<T> obs(sb.batch, obs_width);
    Mat<T> act = Mat<T>::zeros(sb.batch, action_count);
    Mat<T> rew(sb.batch, 1);
    Mat<T> ct(sb.batch, 1);
    Mat<T> cw(sb.batch, 1);
    std::vector<uint8_t> first(static_cast<size_t>(sb.batch), 0);
    for (int b = 0; b < sb.batch; ++b) {
      const Step& s = mb.windows[static_cast<size_t>(b)][static_cast<size_t>(j)];
      if (static_cast<int>(s.observation.size()) != obs_width)
        throw RuntimeError("sequence batch: observation width mismatch");
      for (int k = 0; k < obs_width; ++k)
        obs(b, k) = static_cast<T>(s.observation[static_cast<size_t>(k)]);
      if (!s.is_first) {
        if (s.action < 0 || s.action >= action_count)
          throw RuntimeError("sequence batch: action out of range");
        act(b, s.action) = T(1);
      }
      rew(b, 0) = static_cast<T>(s.reward);
      first[static_cast<size_t>(b)] = s.is_first ? 1 : 0;
      if (j + 1 < sb.length) {
        const bool next_first =
            mb.windows[static_cast<size_t>(b)][static_cast<size_t>(j + 1)].is_first;
        ct(b, 0) = next_first ? T(0) : T(1);
        cw(b, 0) = T(1);
      } else {
        ct(b, 0) = T(0.5);
        cw(b, 0) = T(0);
      }
    }
    sb.obs.push_back(std::move(obs));
    sb.action_onehot.push_back(std::move(act));
    sb.reward.push_back(std::move(rew));
    sb.is_first.push_back(std::move(first));
    sb.cont_target.push_back(std::move(ct));
    sb.cont_weight.push_back(std::move(cw));
  }
  return sb;
}

// Recurrent state-space world model. The model state is the concatenation of
// a deterministic GRU path h and a one-hot categorical latent z; the
// posterior reads the current observation, the prior predicts without it,
// and decoder/reward/continue heads read [h, z].
template <typename T>
class WorldModel {
 public:
  struct StateValue {
    Mat<T> h;  // [rows, deter_width]
    Mat<T> z;  // [rows, latent_width]
  };

  struct Diagnostics {
    double total = 0;
    double recon = 0;
    double reward = 0;
    double cont = 0;
    double kl_dyn = 0;  // after free-bits clamping
    double kl_rep = 0;
  };

  struct SequenceResult {
    Var<T> loss;
    Diagnostics diag;
    std::vector<StateValue> states;  // posterior state per step
  };

  struct ObserveOut {
    StateValue state;
    Mat<T> post_logits;
    Mat<T> prior_logits;
  };

  struct DreamOut {
    Var<T> h;
    Var<T> z;
    Var<T> reward;
    Var<T> cont_prob;
  };

  WorldModel(const RssmConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(param_seed, 0x5eedu);
    const int uc = cfg_.latent_width();
    const int sw = cfg_.state_width();
    encoder_ = MlpP<T>::make(ps_, "wm.encoder", cfg_.obs_width, cfg_.hidden_width,
                             cfg_.hidden_layers, cfg_.embed_width, rng);
    posterior_ = MlpP<T>::make(ps_, "wm.posterior", cfg_.deter_width + cfg_.embed_width,
                               cfg_.hidden_width, cfg_.hidden_layers, uc, rng);
    prior_ = MlpP<T>::make(ps_, "wm.prior", cfg_.deter_width, cfg_.hidden_width,
                           cfg_.hidden_layers, uc, rng);
    decoder_ = MlpP<T>::make(ps_, "wm.decoder", sw, cfg_.hidden_width, cfg_.hidden_layers,
                             cfg_.obs_width, rng);
    reward_ = MlpP<T>::make(ps_, "wm.reward", sw, cfg_.hidden_width, cfg_.hidden_layers, 1, rng);
    cont_ = MlpP<T>::make(ps_, "wm.continue", sw, cfg_.hidden_width, cfg_.hidden_layers, 1, rng);
    gru_ = GruP<T>::make(ps_, "wm.gru", uc + cfg_.action_count, cfg_.deter_width, rng);
    h0_ = &ps_.add("wm.h0", Mat<T>::zeros(1, cfg_.deter_width));
  }

  const RssmConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return ps_; }

  // Full-sequence posterior pass with the training loss. `mean_latent`
  // replaces categorical samples by their softmax means: that keeps the
  // whole computation differentiable end to end for finite-difference
  // checks, where a sampled forward would be invalid. `full_kl_grad` drops
  // the stop-gradient split on the two KL terms, which leaves the loss
  // value unchanged but makes its gradient the plain derivative; finite
  // differences cannot represent stop-gradients. Training always uses the
  // split (and sampled latents).
  SequenceResult observe_sequence(Tape<T>& t, const SequenceBatch<T>& sb, Rng& rng,
                                  bool mean_latent = false, bool full_kl_grad = false) {
    check_batch(sb);
    FiniteCheckGuard fin(true);
    const int units = cfg_.latent_units;
    const int classes = cfg_.latent_classes;
    const int L = sb.length;

    Var<T> h0row = t.leaf(*h0_);
    Var<T> prior0 = prior_(t, h0row);
    Var<T> z0row = mean_latent ? unit_softmax(prior0, units, classes)
                               : categorical_sample_st(prior0, units, classes, rng);
    Var<T> h = tile_rows(h0row, sb.batch);
    Var<T> z = tile_rows(z0row, sb.batch);

    SequenceResult res;
    Var<T> total;
    for (int j = 0; j < L; ++j) {
      h = where_rows(sb.is_first[static_cast<size_t>(j)], h0row, h);
      z = where_rows(sb.is_first[static_cast<size_t>(j)], z0row, z);
      Var<T> a = t.constant(sb.action_onehot[static_cast<size_t>(j)]);
      Var<T> gru_in = concat_cols<T>({z, a});
      h = gru_(t, h, gru_in);
      Var<T> prior_logits = prior_(t, h);
      Var<T> embed = encoder_(t, t.constant(sb.obs[static_cast<size_t>(j)]));
      Var<T> post_logits = posterior_(t, concat_cols<T>({h, embed}));
      z = mean_latent ? unit_softmax(post_logits, units, classes)
                      : categorical_sample_st(post_logits, units, classes, rng);

      Var<T> dec_in = concat_cols<T>({h, z});
      Var<T> recon_l =
          scale(squared_diff_rowsum(decoder_(t, dec_in), sb.obs[static_cast<size_t>(j)]), T(0.5));
      Var<T> reward_l =
          scale(squared_diff_rowsum(reward_(t, dec_in), sb.reward[static_cast<size_t>(j)]),
                T(0.5));
      Var<T> cont_l = bce_with_logits(cont_(t, dec_in), sb.cont_target[static_cast<size_t>(j)],
                                      sb.cont_weight[static_cast<size_t>(j)]);
      Var<T> kl_dyn = max_const(
          kl_categorical(post_logits, prior_logits, units, classes, full_kl_grad, true),
          T(cfg_.free_bits));
      Var<T> kl_rep = max_const(
          kl_categorical(post_logits, prior_logits, units, classes, true, full_kl_grad),
          T(cfg_.free_bits));
      Var<T> step_l = add(add(add(recon_l, reward_l), cont_l),
                          add(scale(kl_dyn, T(cfg_.beta_dyn)), scale(kl_rep, T(cfg_.beta_rep))));
      total = j == 0 ? step_l : add(total, step_l);

      res.diag.recon += row_mean(t, recon_l);
      res.diag.reward += row_mean(t, reward_l);
      res.diag.cont += row_mean(t, cont_l);
      res.diag.kl_dyn += row_mean(t, kl_dyn);
      res.diag.kl_rep += row_mean(t, kl_rep);
      res.states.push_back({t.val(h.id), t.val(z.id)});
    }
    res.loss = mean_all(scale(total, T(1) / T(L)));
    res.diag.recon /= L;
    res.diag.reward /= L;
    res.diag.cont /= L;
    res.diag.kl_dyn /= L;
    res.diag.kl_rep /= L;
    res.diag.total = static_cast<double>(t.val(res.loss.id)(0, 0));
    return res;
  }

  // Single-row posterior filter step used during data collection and for
  // direct inspection in tests. On is_first the incoming state and action
  // are replaced by the learned initial state and a zero action.
  ObserveOut observe_step(const StateValue& prev, int action, const Mat<T>& obs_row,
                          bool is_first, Rng& rng) {
    if (!obs_row.all_finite()) throw NumericsError("observe_step: non-finite observation");
    if (obs_row.rows() != 1 || obs_row.cols() != cfg_.obs_width)
      throw RuntimeError("observe_step: bad observation shape");
    Tape<T> t;
    t.grad_enabled = false;
    FiniteCheckGuard fin(true);
    const int units = cfg_.latent_units;
    const int classes = cfg_.latent_classes;

    Var<T> h_prev, z_prev;
    Mat<T> a_row = Mat<T>::zeros(1, cfg_.action_count);
    if (is_first) {
      Var<T> h0row = t.leaf(*h0_);
      h_prev = h0row;
      z_prev = categorical_sample_st(prior_(t, h0row), units, classes, rng);
    } else {
      if (action < 0 || action >= cfg_.action_count)
        throw RuntimeError("observe_step: action out of range");
      a_row(0, action) = T(1);
      h_prev = t.constant(prev.h);
      z_prev = t.constant(prev.z);
    }
    Var<T> h = gru_(t, h_prev, concat_cols<T>({z_prev, t.constant(a_row)}));
    Var<T> prior_logits = prior_(t, h);
    Var<T> embed = encoder_(t, t.constant(obs_row));
    Var<T> post_logits = posterior_(t, concat_cols<T>({h, embed}));
    Var<T> z = categorical_sample_st(post_logits, units, classes, rng);

    ObserveOut out;
    out.state = {t.val(h.id), t.val(z.id)};
    out.post_logits = t.val(post_logits.id);
    out.prior_logits = t.val(prior_logits.id);
    return out;
  }

  // One imagination step: transition through the GRU, sample the latent
  // from the prior, and decode reward and continue probability. Callers
  // training another module on top should bind this under FreezeLeavesGuard.
  DreamOut dream_step(Tape<T>& t, Var<T> h_prev, Var<T> z_prev, Var<T> a_onehot, Rng& rng) {
    Var<T> h = gru_(t, h_prev, concat_cols<T>({z_prev, a_onehot}));
    Var<T> prior_logits = prior_(t, h);
    Var<T> z = categorical_sample_st(prior_logits, cfg_.latent_units, cfg_.latent_classes, rng);
    Var<T> dec_in = concat_cols<T>({h, z});
    return {h, z, reward_(t, dec_in), sigmoid_act(cont_(t, dec_in))};
  }

  void save(BinWriter& w) const {
    w.magic(kMagic);
    cfg_.save(w);
    ps_.save(w);
  }

  void load(BinReader& r) {
    r.expect_magic(kMagic);
    if (!(RssmConfig::loaded(r) == cfg_))
      throw RuntimeError("world model checkpoint: config mismatch");
    ps_.load(r);
  }

 private:
  static constexpr char kMagic[9] = "WMARWMD1";

  void check_batch(const SequenceBatch<T>& sb) const {
    if (sb.batch < 1 || sb.length < 1) throw RuntimeError("observe_sequence: empty batch");
    for (const auto& m : sb.obs) {
      if (m.cols() != cfg_.obs_width) throw RuntimeError("observe_sequence: obs width mismatch");
      if (!m.all_finite()) throw NumericsError("observe_sequence: non-finite observation");
    }
    for (const auto& m : sb.action_onehot) {
      if (m.cols() != cfg_.action_count)
        throw RuntimeError("observe_sequence: action width mismatch");
    }
  }

  static double row_mean(Tape<T>& t, Var<T> v) {
    const Mat<T>& m = t.val(v.id);
    double s = 0;
    for (int r = 0; r < m.rows(); ++r) s += static_cast<double>(m(r, 0));
    return s / m.rows();
  }

  RssmConfig cfg_;
  ParamStore<T> ps_;
  MlpP<T> encoder_, posterior_, prior_, decoder_, reward_, cont_;
  GruP<T> gru_;
  Param<T>* h0_ = nullptr;
};

}  // namespace wmar
