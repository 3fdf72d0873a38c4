#pragma once

// Recurrent perception: conv encoder -> embedding, gated belief fusion,
// classification head, and the contrastive (InfoNCE-style) loss over a
// learned label-embedding space. All pieces build into a Graph so the same
// code path serves training, attacks and evaluation.

#include <cmath>
#include <string>
#include <vector>

#include "patchdef/nn.hpp"

namespace patchdef {

struct PerceptionConfig {
  int image_size = 32;
  int n_classes = 4;
  int d_e = 64;  // embedding width
  int d_b = 64;  // belief width
  int nce_dim = 32;  // label-embedding space for the contrastive loss

  std::string manifest() const {
    return "enc:conv8-16-24+fc96/de" + std::to_string(d_e) + "/db" +
           std::to_string(d_b) + "/k" + std::to_string(n_classes) + "/nce" +
           std::to_string(nce_dim) + "/img" + std::to_string(image_size);
  }
};

template <typename T>
class PerceptionModel {
 public:
  PerceptionModel(const PerceptionConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.image_size % 8 != 0)
      throw std::invalid_argument("PerceptionModel: image_size must be divisible by 8");
    int s = cfg.image_size / 8;
    flat_ = s * s * 24;
    c1_.init("enc.c1", 3, 3, 3, 8, 2, 1, rng);
    c2_.init("enc.c2", 3, 3, 8, 16, 2, 1, rng);
    c3_.init("enc.c3", 3, 3, 16, 24, 2, 1, rng);
    fc1_.init_he("enc.fc1", flat_, 96, rng);
    fc2_.init_he("enc.fc2", 96, cfg.d_e, rng);
    gate_.init_glorot("fuse.gate", cfg.d_b + cfg.d_e, cfg.d_b, rng);
    cand_.init_glorot("fuse.cand", cfg.d_b + cfg.d_e, cfg.d_b, rng);
    head_.init_glorot("head", cfg.d_b, cfg.n_classes, rng);
    nce_proj_.init_glorot("nce.proj", cfg.d_b, cfg.nce_dim, rng);
    label_emb_ = Parameter<T>("nce.labels",
                              init::glorot<T>({cfg.n_classes, cfg.nce_dim},
                                              cfg.n_classes, cfg.nce_dim, rng));
    c1_.register_in(params_);
    c2_.register_in(params_);
    c3_.register_in(params_);
    fc1_.register_in(params_);
    fc2_.register_in(params_);
    gate_.register_in(params_);
    cand_.register_in(params_);
    head_.register_in(params_);
    nce_proj_.register_in(params_);
    params_.add(label_emb_);
  }

  // (R,R,3) image in [0,1] -> (1,d_e) embedding
  Var<T> encode(Graph<T>& g, Var<T> obs) {
    Var<T> h = relu(c1_.apply(g, obs));
    h = relu(c2_.apply(g, h));
    h = relu(c3_.apply(g, h));
    h = reshape(h, {1, flat_});
    h = relu(fc1_.apply(g, h));
    return fc2_.apply(g, h);
  }

  // b_t = b_prev + g ⊙ (c − b_prev) with g = σ(W_g[b,e]), c = tanh(W_c[b,e])
  Var<T> fuse(Graph<T>& g, Var<T> b_prev, Var<T> e) {
    Var<T> z = concat(b_prev, e, 1);
    Var<T> gate = sigmoid(gate_.apply(g, z));
    Var<T> cand = tanh_(cand_.apply(g, z));
    return add(b_prev, mul(gate, sub(cand, b_prev)));
  }

  // belief -> (1,K) logits
  Var<T> head(Graph<T>& g, Var<T> b) { return head_.apply(g, b); }

  // One recurrence step: encode, fuse, predict.
  struct Step {
    Var<T> belief;
    Var<T> logits;
  };
  Step step(Graph<T>& g, Var<T> b_prev, Var<T> obs) {
    Var<T> b = fuse(g, b_prev, encode(g, obs));
    return {b, head(g, b)};
  }

  Tensor<T> initial_belief() const { return Tensor<T>::zeros({1, cfg_.d_b}); }

  // Contrastive loss over a batch of post-fusion beliefs and their labels:
  //   mean_j [ -S_jj - log( (1/B) Σ_k exp(-S_jk) ) ]
  // where S_jk is the dot product of projected belief j and the embedding of
  // label k. Decreases as correct-pair similarity grows, others fixed.
  Var<T> infonce(Graph<T>& g, Var<T> beliefs, const std::vector<int>& labels) {
    int B = g.vten(beliefs.i).shape[0];
    if (B < 2 || int(labels.size()) != B)
      throw std::invalid_argument("infonce: need batch >= 2 with matching labels, got " +
                                  std::to_string(B) + " beliefs / " +
                                  std::to_string(labels.size()) + " labels");
    Var<T> proj = nce_proj_.apply(g, beliefs);                   // (B, nce_dim)
    Var<T> emb = gather_rows(g.param(label_emb_), labels);       // (B, nce_dim)
    Var<T> sim = matmul_t(proj, emb);                            // S_jk
    Var<T> lse = logsumexp(scale(sim, T(-1)));                   // (B,1)
    Tensor<T> eye = Tensor<T>::zeros({B, B});
    for (int j = 0; j < B; ++j) eye.at(j, j) = T(1);
    Var<T> diag = sum(mul(sim, g.value(std::move(eye))));
    Var<T> total = add(diag, sum(lse));
    return add_const(scale(total, T(-1.0 / B)), T(std::log(double(B))));
  }

  ParamSet<T>& params() { return params_; }
  const PerceptionConfig& config() const { return cfg_; }
  std::string manifest() const { return cfg_.manifest(); }

 private:
  PerceptionConfig cfg_;
  int flat_ = 0;
  ConvLayer<T> c1_, c2_, c3_;
  DenseLayer<T> fc1_, fc2_, gate_, cand_, head_, nce_proj_;
  Parameter<T> label_emb_;
  ParamSet<T> params_;
};

}  // namespace patchdef
