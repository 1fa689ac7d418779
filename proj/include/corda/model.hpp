#pragma once

// Correlation-aware dual-task network:
//
//   image -> shared encoder -> {semantic, depth} bottlenecks (F channels)
//         -> intermediate heads (shared semantic, per-domain depth)
//         -> task feature correlation (domain-shared residual attention)
//         -> final decoders (shared semantic, per-domain depth)
//
// Every stage can run with a trace so that backward() can accumulate
// parameter gradients; without a trace the forward pass is read-only and
// safe to call concurrently.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "corda/nn.hpp"
#include "corda/tensor.hpp"

namespace corda {

struct ModelConfig {
  std::vector<int> backbone_widths{16, 32, 48, 48};
  std::vector<int> backbone_strides{2, 2, 2, 1};
  int features = 64;        // F: channels of the task features
  int decoder_width = 0;    // hidden width of the final decoders, 0 = features
  int classes = 5;
  bool use_correlation = true;
  bool tie_depth_init = true;  // start both depth branches from identical weights
  std::uint64_t seed = 0;

  int total_stride() const {
    int s = 1;
    for (int v : backbone_strides) s *= v;
    return s;
  }
  int hidden() const { return decoder_width > 0 ? decoder_width : features; }

  void validate() const {
    if (features <= 0) throw ConfigError("model: features must be > 0");
    if (classes < 2) throw ConfigError("model: need at least 2 classes");
    if (backbone_widths.empty() || backbone_widths.size() != backbone_strides.size())
      throw ConfigError("model: backbone widths and strides must be non-empty and equal length");
    for (int w : backbone_widths)
      if (w <= 0) throw ConfigError("model: backbone widths must be > 0");
    for (int s : backbone_strides)
      if (s != 1 && s != 2) throw ConfigError("model: backbone strides must be 1 or 2");
    if (decoder_width < 0) throw ConfigError("model: decoder_width must be >= 0");
  }
};

/// The four attention convolutions of the task feature correlation module.
/// d1/d2 read depth features and gate into semantics; s1/s2 the reverse.
struct CorrelationParams {
  nn::Conv2d w_d1, w_d2, w_s1, w_s2;

  CorrelationParams() = default;
  explicit CorrelationParams(int features)
      : w_d1(features, features, 3), w_d2(features, features, 3),
        w_s1(features, features, 3), w_s2(features, features, 3) {}

  int features() const { return w_d1.in; }
  void zero() {
    for (auto* c : {&w_d1, &w_d2, &w_s1, &w_s2}) c->zero_params();
  }
};

struct CorrelationTrace {
  nn::ConvTrace d1, d2, s1, s2;
  Tensor att_d, gate_d, att_s, gate_s;  // gate = sigmoid output
};

/// F_seg_o = F_seg + (W_d1 * F_depth) . sigmoid(W_d2 * F_depth)
/// F_depth_o = F_depth + (W_s1 * F_seg) . sigmoid(W_s2 * F_seg)
inline std::pair<Tensor, Tensor> correlation_distill(const Tensor& f_seg, const Tensor& f_depth,
                                                     const CorrelationParams& p,
                                                     CorrelationTrace* trace = nullptr) {
  require(f_seg.same_shape(f_depth), "correlation_distill: feature shapes differ");
  require(f_seg.c() == p.features(), "correlation_distill: channel count does not match module");
  CorrelationTrace local;
  CorrelationTrace& t = trace ? *trace : local;

  t.att_d = nn::conv_forward(p.w_d1, f_depth, trace ? &t.d1 : nullptr);
  t.gate_d = nn::sigmoid(nn::conv_forward(p.w_d2, f_depth, trace ? &t.d2 : nullptr));
  t.att_s = nn::conv_forward(p.w_s1, f_seg, trace ? &t.s1 : nullptr);
  t.gate_s = nn::sigmoid(nn::conv_forward(p.w_s2, f_seg, trace ? &t.s2 : nullptr));

  Tensor seg_o = f_seg, depth_o = f_depth;
  for (std::size_t i = 0; i < seg_o.size(); ++i) {
    seg_o.raw()[i] += t.att_d.raw()[i] * t.gate_d.raw()[i];
    depth_o.raw()[i] += t.att_s.raw()[i] * t.gate_s.raw()[i];
  }
  return {std::move(seg_o), std::move(depth_o)};
}

/// Returns (dF_seg, dF_depth) given gradients of the distilled features.
inline std::pair<Tensor, Tensor> correlation_backward(CorrelationParams& p, const CorrelationTrace& t,
                                                      const Tensor& d_seg_o, const Tensor& d_depth_o) {
  Tensor d_seg = d_seg_o, d_depth = d_depth_o;
  Tensor d_att_d(d_seg_o.n(), d_seg_o.c(), d_seg_o.h(), d_seg_o.w());
  Tensor d_pre_d = d_att_d, d_att_s = d_att_d, d_pre_s = d_att_d;
  for (std::size_t i = 0; i < d_seg_o.size(); ++i) {
    const float gd = t.gate_d.raw()[i], gs = t.gate_s.raw()[i];
    d_att_d.raw()[i] = d_seg_o.raw()[i] * gd;
    d_pre_d.raw()[i] = d_seg_o.raw()[i] * t.att_d.raw()[i] * gd * (1.0f - gd);
    d_att_s.raw()[i] = d_depth_o.raw()[i] * gs;
    d_pre_s.raw()[i] = d_depth_o.raw()[i] * t.att_s.raw()[i] * gs * (1.0f - gs);
  }
  d_depth += nn::conv_backward(p.w_d1, t.d1, d_att_d);
  d_depth += nn::conv_backward(p.w_d2, t.d2, d_pre_d);
  d_seg += nn::conv_backward(p.w_s1, t.s1, d_att_s);
  d_seg += nn::conv_backward(p.w_s2, t.s2, d_pre_s);
  return {std::move(d_seg), std::move(d_depth)};
}

struct ModelOutput {
  Tensor sem_init;     // N x C x H x W logits
  Tensor depth_init;   // N x 1 x H x W inverse depth
  Tensor sem_final;
  Tensor depth_final;
  Tensor f_seg, f_depth, f_seg_o, f_depth_o;  // N x F x h x w
};

/// Loss gradients with respect to the four predictions; empty = no gradient.
struct OutputGrads {
  Tensor sem_init, depth_init, sem_final, depth_final;
};

struct BackboneTrace {
  std::vector<nn::ConvTrace> convs;
  std::vector<Tensor> outputs;
};

struct IntermediateOutput {
  Tensor sem_init, depth_init, f_seg, f_depth;
};

struct IntermediateTrace {
  nn::ConvTrace seg_bottleneck, depth_bottleneck, sem_head, depth_head;
  int feat_h = 0, feat_w = 0;
};

struct FinalOutput {
  Tensor sem_final, depth_final;
};

struct FinalTrace {
  nn::ConvTrace sem0, sem1, depth0, depth1;
  Tensor sem_hidden, depth_hidden;
  int feat_h = 0, feat_w = 0;
};

struct ForwardTrace {
  Domain domain = Domain::kSource;
  int in_h = 0, in_w = 0;
  bool distilled = false;
  BackboneTrace backbone;
  IntermediateTrace inter;
  CorrelationTrace corr;
  FinalTrace fin;
  Tensor features, f_seg, f_depth;
};

class Model {
 public:
  Model() = default;

  explicit Model(ModelConfig cfg) : config_(std::move(cfg)) {
    config_.validate();
    const int f = config_.features, c = config_.classes, hid = config_.hidden();
    int in = 3;
    for (std::size_t i = 0; i < config_.backbone_widths.size(); ++i) {
      backbone_.emplace_back(in, config_.backbone_widths[i], 3, config_.backbone_strides[i]);
      in = config_.backbone_widths[i];
    }
    seg_bottleneck_ = nn::Conv2d(in, f, 3);
    depth_bottleneck_ = nn::Conv2d(in, f, 3);
    sem_head_init_ = nn::Conv2d(f, c, 1);
    for (auto& h : depth_head_init_) h = nn::Conv2d(f, 1, 1);
    corr_ = CorrelationParams(f);
    sem_decoder_ = {nn::Conv2d(f, hid, 3), nn::Conv2d(hid, c, 1)};
    for (auto& d : depth_decoder_) d = {nn::Conv2d(f, hid, 3), nn::Conv2d(hid, 1, 1)};
    initialize();
  }

  const ModelConfig& config() const { return config_; }
  int classes() const { return config_.classes; }

  /// He-normal for every block except the attention output convolutions
  /// (W_d1, W_s1), which start at zero so distillation begins as identity.
  void initialize() {
    std::mt19937_64 rng(config_.seed);
    for (auto& [name, conv] : named_parameters()) conv->init_he(rng);
    corr_.w_d1.zero_params();
    corr_.w_s1.zero_params();
    if (config_.tie_depth_init) tie_depth_branches();
  }

  /// Copies the source depth head and decoder into the target ones.
  void tie_depth_branches() {
    depth_head_init_[1] = depth_head_init_[0];
    depth_decoder_[1] = depth_decoder_[0];
  }

  std::vector<std::pair<std::string, nn::Conv2d*>> named_parameters() {
    std::vector<std::pair<std::string, nn::Conv2d*>> out;
    for (std::size_t i = 0; i < backbone_.size(); ++i)
      out.emplace_back("backbone/" + std::to_string(i), &backbone_[i]);
    out.emplace_back("seg_bottleneck", &seg_bottleneck_);
    out.emplace_back("depth_bottleneck", &depth_bottleneck_);
    out.emplace_back("sem_head_init", &sem_head_init_);
    out.emplace_back("depth_head_init_src", &depth_head_init_[0]);
    out.emplace_back("depth_head_init_tgt", &depth_head_init_[1]);
    out.emplace_back("corr/W_d1", &corr_.w_d1);
    out.emplace_back("corr/W_d2", &corr_.w_d2);
    out.emplace_back("corr/W_s1", &corr_.w_s1);
    out.emplace_back("corr/W_s2", &corr_.w_s2);
    out.emplace_back("sem_decoder/0", &sem_decoder_[0]);
    out.emplace_back("sem_decoder/1", &sem_decoder_[1]);
    out.emplace_back("depth_decoder_src/0", &depth_decoder_[0][0]);
    out.emplace_back("depth_decoder_src/1", &depth_decoder_[0][1]);
    out.emplace_back("depth_decoder_tgt/0", &depth_decoder_[1][0]);
    out.emplace_back("depth_decoder_tgt/1", &depth_decoder_[1][1]);
    return out;
  }

  void zero_grad() {
    for (auto& [name, conv] : named_parameters()) conv->zero_grad();
  }

  CorrelationParams& correlation() { return corr_; }
  const CorrelationParams& correlation() const { return corr_; }
  nn::Conv2d& sem_head_init() { return sem_head_init_; }
  std::array<nn::Conv2d, 2>& sem_decoder() { return sem_decoder_; }
  nn::Conv2d& depth_head_init(Domain d) { return depth_head_init_[index(d)]; }
  std::array<nn::Conv2d, 2>& depth_decoder(Domain d) { return depth_decoder_[index(d)]; }

  // ---- forward stages -----------------------------------------------------

  Tensor backbone_forward(const Tensor& images, BackboneTrace* trace = nullptr) const {
    require(images.c() == 3, "backbone_forward: expected 3 input channels");
    const int s = config_.total_stride();
    require(images.h() % s == 0 && images.w() % s == 0 && images.h() > 0,
            "backbone_forward: input dims must be divisible by the total stride " + std::to_string(s));
    if (trace) {
      trace->convs.assign(backbone_.size(), {});
      trace->outputs.clear();
    }
    Tensor x = images;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      x = nn::relu(nn::conv_forward(backbone_[i], x, trace ? &trace->convs[i] : nullptr));
      if (trace) trace->outputs.push_back(x);
    }
    return x;
  }

  IntermediateOutput intermediate_stage(const Tensor& features, Domain domain, int out_h, int out_w,
                                        IntermediateTrace* trace = nullptr) const {
    check_domain(domain);
    IntermediateOutput o;
    o.f_seg = nn::relu(nn::conv_forward(seg_bottleneck_, features, trace ? &trace->seg_bottleneck : nullptr));
    o.f_depth = nn::relu(nn::conv_forward(depth_bottleneck_, features, trace ? &trace->depth_bottleneck : nullptr));
    o.sem_init = nn::upsample_bilinear(
        nn::conv_forward(sem_head_init_, o.f_seg, trace ? &trace->sem_head : nullptr), out_h, out_w);
    o.depth_init = nn::upsample_bilinear(
        nn::conv_forward(depth_head_init_[index(domain)], o.f_depth, trace ? &trace->depth_head : nullptr),
        out_h, out_w);
    if (trace) {
      trace->feat_h = features.h();
      trace->feat_w = features.w();
    }
    return o;
  }

  FinalOutput final_stage(const Tensor& f_seg_o, const Tensor& f_depth_o, Domain domain, int out_h, int out_w,
                          FinalTrace* trace = nullptr) const {
    check_domain(domain);
    FinalOutput o;
    o.sem_final = nn::upsample_bilinear(semantic_decode(f_seg_o, trace), out_h, out_w);
    o.depth_final = nn::upsample_bilinear(depth_decode(f_depth_o, domain, trace), out_h, out_w);
    if (trace) {
      trace->feat_h = f_seg_o.h();
      trace->feat_w = f_seg_o.w();
    }
    return o;
  }

  ModelOutput forward(const Tensor& images, Domain domain, ForwardTrace* trace = nullptr) const {
    check_domain(domain);
    const int h = images.h(), w = images.w();
    ModelOutput out;
    Tensor feats = backbone_forward(images, trace ? &trace->backbone : nullptr);
    auto inter = intermediate_stage(feats, domain, h, w, trace ? &trace->inter : nullptr);
    out.sem_init = std::move(inter.sem_init);
    out.depth_init = std::move(inter.depth_init);
    out.f_seg = std::move(inter.f_seg);
    out.f_depth = std::move(inter.f_depth);
    if (config_.use_correlation) {
      std::tie(out.f_seg_o, out.f_depth_o) =
          correlation_distill(out.f_seg, out.f_depth, corr_, trace ? &trace->corr : nullptr);
    } else {
      out.f_seg_o = out.f_seg;
      out.f_depth_o = out.f_depth;
    }
    auto fin = final_stage(out.f_seg_o, out.f_depth_o, domain, h, w, trace ? &trace->fin : nullptr);
    out.sem_final = std::move(fin.sem_final);
    out.depth_final = std::move(fin.depth_final);
    if (trace) {
      trace->domain = domain;
      trace->in_h = h;
      trace->in_w = w;
      trace->distilled = config_.use_correlation;
      trace->features = std::move(feats);
      trace->f_seg = out.f_seg;
      trace->f_depth = out.f_depth;
    }
    return out;
  }

  /// Final depth predictions of both domain decoders on the same distilled
  /// depth features, upsampled to out_h x out_w. Index 0 = source.
  std::array<Tensor, 2> final_depth_both(const Tensor& f_depth_o, int out_h, int out_w) const {
    return {nn::upsample_bilinear(depth_decode(f_depth_o, Domain::kSource, nullptr), out_h, out_w),
            nn::upsample_bilinear(depth_decode(f_depth_o, Domain::kTarget, nullptr), out_h, out_w)};
  }

  // ---- backward -----------------------------------------------------------

  /// Accumulates parameter gradients for the pass recorded in trace.
  void backward(const ForwardTrace& t, const OutputGrads& g) {
    const int fh = t.inter.feat_h, fw = t.inter.feat_w;
    const int di = index(t.domain);
    Tensor d_seg_o(t.f_seg.n(), t.f_seg.c(), fh, fw);
    Tensor d_depth_o = d_seg_o;
    bool any_final = false;

    if (!g.sem_final.empty()) {
      Tensor d = nn::upsample_bilinear_backward(g.sem_final, fh, fw);
      d = nn::conv_backward(sem_decoder_[1], t.fin.sem1, d);
      d = nn::relu_backward(t.fin.sem_hidden, std::move(d));
      d_seg_o += nn::conv_backward(sem_decoder_[0], t.fin.sem0, d);
      any_final = true;
    }
    if (!g.depth_final.empty()) {
      Tensor d = nn::upsample_bilinear_backward(g.depth_final, fh, fw);
      d = nn::conv_backward(depth_decoder_[di][1], t.fin.depth1, d);
      d = nn::relu_backward(t.fin.depth_hidden, std::move(d));
      d_depth_o += nn::conv_backward(depth_decoder_[di][0], t.fin.depth0, d);
      any_final = true;
    }

    Tensor d_seg, d_depth;
    if (any_final && t.distilled) {
      std::tie(d_seg, d_depth) = correlation_backward(corr_, t.corr, d_seg_o, d_depth_o);
    } else {
      d_seg = std::move(d_seg_o);
      d_depth = std::move(d_depth_o);
    }

    if (!g.sem_init.empty())
      d_seg += nn::conv_backward(sem_head_init_, t.inter.sem_head,
                                 nn::upsample_bilinear_backward(g.sem_init, fh, fw));
    if (!g.depth_init.empty())
      d_depth += nn::conv_backward(depth_head_init_[di], t.inter.depth_head,
                                   nn::upsample_bilinear_backward(g.depth_init, fh, fw));

    Tensor d_feat = nn::conv_backward(seg_bottleneck_, t.inter.seg_bottleneck,
                                      nn::relu_backward(t.f_seg, std::move(d_seg)));
    d_feat += nn::conv_backward(depth_bottleneck_, t.inter.depth_bottleneck,
                                nn::relu_backward(t.f_depth, std::move(d_depth)));

    for (std::size_t i = backbone_.size(); i-- > 0;) {
      d_feat = nn::relu_backward(t.backbone.outputs[i], std::move(d_feat));
      d_feat = nn::conv_backward(backbone_[i], t.backbone.convs[i], d_feat, i > 0);
    }
  }

 private:
  static int index(Domain d) { return d == Domain::kSource ? 0 : 1; }

  static void check_domain(Domain d) {
    require(d == Domain::kSource || d == Domain::kTarget, "unknown domain");
  }

  Tensor semantic_decode(const Tensor& f, FinalTrace* trace) const {
    Tensor hidden = nn::relu(nn::conv_forward(sem_decoder_[0], f, trace ? &trace->sem0 : nullptr));
    Tensor logits = nn::conv_forward(sem_decoder_[1], hidden, trace ? &trace->sem1 : nullptr);
    if (trace) trace->sem_hidden = std::move(hidden);
    return logits;
  }

  Tensor depth_decode(const Tensor& f, Domain domain, FinalTrace* trace) const {
    const auto& dec = depth_decoder_[index(domain)];
    Tensor hidden = nn::relu(nn::conv_forward(dec[0], f, trace ? &trace->depth0 : nullptr));
    Tensor pred = nn::conv_forward(dec[1], hidden, trace ? &trace->depth1 : nullptr);
    if (trace) trace->depth_hidden = std::move(hidden);
    return pred;
  }

  ModelConfig config_;
  std::vector<nn::Conv2d> backbone_;
  nn::Conv2d seg_bottleneck_, depth_bottleneck_;
  nn::Conv2d sem_head_init_;
  std::array<nn::Conv2d, 2> depth_head_init_;
  CorrelationParams corr_;
  std::array<nn::Conv2d, 2> sem_decoder_;
  std::array<std::array<nn::Conv2d, 2>, 2> depth_decoder_;
};

}  // namespace corda
