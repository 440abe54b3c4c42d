#include "facereenact/fusion.hpp"

#include "facereenact/kernels.hpp"

namespace facereenact {

namespace {

template <class T>
void require_batched(const Tensor<T>& t, std::size_t channels, std::size_t batch, const char* what) {
  require_shape(t.shape(), {channels, batch, kFeatureGrid, kFeatureGrid}, what);
}

}  // namespace

template <class T>
Fusion<T>::Fusion(FusionConfig config)
    : config_(config),
      projection_("fusion.pose_projection", {kPoseChannels, kFusedChannels, 1, 1, 0}, false),
      gamma_app_("fusion.gamma_app", {kAppearanceChannels, kFusedChannels, 1, 1, 0}, true),
      beta_app_("fusion.beta_app", {kAppearanceChannels, kFusedChannels, 1, 1, 0}, true),
      gamma_p_("fusion.gamma_p", {kFusedChannels, kFusedChannels, 1, 1, 0}, true),
      beta_p_("fusion.beta_p", {kFusedChannels, kFusedChannels, 1, 1, 0}, true) {
  Rng rng(config_.seed);
  projection_.init_fan_in(rng, 1.0);
  for (auto* c : {&gamma_app_, &beta_app_, &gamma_p_, &beta_p_}) {
    c->init_fan_in(rng, config_.modulation_init_std);
  }
}

template <class T>
Tensor<T> Fusion<T>::project_pose(const Tensor<T>& f_p, std::size_t batch) const {
  require_batched(f_p, kPoseChannels, batch, "pose features");
  return projection_.forward(f_p, batch, kFeatureGrid, kFeatureGrid, nullptr);
}

template <class T>
Tensor<T> Fusion<T>::fuse(const Tensor<T>& f_app, const Tensor<T>& f_p, std::size_t batch,
                          FusionTape<T>* tape) const {
  require_batched(f_app, kAppearanceChannels, batch, "appearance features");
  Tensor<T> fp = project_pose(f_p, batch);
  const bool cross = config_.conditioning == FusionConditioning::Cross;
  const Tensor<T>& src_app = cross ? fp : f_app;
  const Tensor<T>& src_p = cross ? f_app : fp;
  const std::size_t g = kFeatureGrid;
  Tensor<T> ga = gamma_app_.forward(src_app, batch, g, g, nullptr);
  Tensor<T> ba = beta_app_.forward(src_app, batch, g, g, nullptr);
  Tensor<T> gp = gamma_p_.forward(src_p, batch, g, g, nullptr);
  Tensor<T> bp = beta_p_.forward(src_p, batch, g, g, nullptr);
  Tensor<T> fr(f_app.shape());
  for (std::size_t i = 0; i < fr.size(); ++i) {
    ga[i] += T(1);
    gp[i] += T(1);
    fr[i] = ga[i] * f_app[i] + ba[i] + gp[i] * fp[i] + bp[i];
  }
  if (tape) {
    tape->f_app = f_app;
    tape->f_p = f_p;
    tape->f_p_proj = std::move(fp);
    tape->gamma_app = std::move(ga);
    tape->gamma_p = std::move(gp);
    tape->batch = batch;
  }
  return fr;
}

template <class T>
void Fusion<T>::backward(const FusionTape<T>& tape, const Tensor<T>& d_fr, Tensor<T>* d_f_app,
                         Tensor<T>* d_f_p) {
  const std::size_t batch = tape.batch;
  require_batched(d_fr, kFusedChannels, batch, "fused gradient");
  const bool cross = config_.conditioning == FusionConditioning::Cross;
  const std::size_t n = d_fr.size();

  // Direct paths through the elementwise products.
  Tensor<T> d_app(tape.f_app.shape()), d_fp(tape.f_p_proj.shape());
  Tensor<T> d_ga(d_fr.shape()), d_gp(d_fr.shape());
  for (std::size_t i = 0; i < n; ++i) {
    d_app[i] = d_fr[i] * tape.gamma_app[i];
    d_fp[i] = d_fr[i] * tape.gamma_p[i];
    d_ga[i] = d_fr[i] * tape.f_app[i];
    d_gp[i] = d_fr[i] * tape.f_p_proj[i];
  }

  // The modulation convs are pointwise, so a cache only needs the input.
  auto cache_for = [&](const Tensor<T>& input) {
    nn::ConvCache<T> c;
    c.input = input;
    c.batch = batch;
    c.h = c.w = kFeatureGrid;
    return c;
  };
  const nn::ConvCache<T> app_cache = cache_for(cross ? tape.f_p_proj : tape.f_app);
  const nn::ConvCache<T> p_cache = cache_for(cross ? tape.f_app : tape.f_p_proj);
  Tensor<T>& d_src_app = cross ? d_fp : d_app;
  Tensor<T>& d_src_p = cross ? d_app : d_fp;
  auto add = [](Tensor<T>& acc, const Tensor<T>& v) {
    kernels::axpy<T>(acc.size(), T(1), v.data(), acc.data());
  };
  add(d_src_app, gamma_app_.backward(app_cache, d_ga, true));
  add(d_src_app, beta_app_.backward(app_cache, d_fr, true));
  add(d_src_p, gamma_p_.backward(p_cache, d_gp, true));
  add(d_src_p, beta_p_.backward(p_cache, d_fr, true));

  nn::ConvCache<T> proj_cache;
  proj_cache.input = tape.f_p;
  proj_cache.batch = batch;
  proj_cache.h = proj_cache.w = kFeatureGrid;
  Tensor<T> d_pose = projection_.backward(proj_cache, d_fp, d_f_p != nullptr);
  if (d_f_p) *d_f_p = std::move(d_pose);
  if (d_f_app) *d_f_app = std::move(d_app);
}

template <class T>
void Fusion<T>::force_identity_modulation() {
  for (auto* c : {&gamma_app_, &beta_app_, &gamma_p_, &beta_p_}) {
    c->weight().value.fill(T(0));
    c->bias().value.fill(T(0));
  }
}

template <class T>
std::vector<nn::Param<T>*> Fusion<T>::params() {
  std::vector<nn::Param<T>*> out;
  for (auto* c : {&projection_, &gamma_app_, &beta_app_, &gamma_p_, &beta_p_}) {
    for (auto* p : c->params()) out.push_back(p);
  }
  return out;
}

template <class T>
Tensor<T> stack_features(const std::vector<const Tensor<T>*>& maps) {
  if (maps.empty()) throw ShapeError("cannot stack an empty batch");
  const Shape& s = maps.front()->shape();
  if (s.size() != 3) throw ShapeError("stack_features expects [C, H, W] maps");
  const std::size_t c = s[0], hw = s[1] * s[2], batch = maps.size();
  Tensor<T> out({c, batch, s[1], s[2]});
  for (std::size_t b = 0; b < batch; ++b) {
    require_shape(maps[b]->shape(), s, "stacked feature map");
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(maps[b]->data() + ch * hw, hw, out.data() + (ch * batch + b) * hw);
    }
  }
  return out;
}

template <class T>
Tensor<T> unstack_sample(const Tensor<T>& batched, std::size_t b) {
  const Shape& s = batched.shape();
  if (s.size() != 4 || b >= s[1]) throw ShapeError("unstack_sample index out of range");
  const std::size_t hw = s[2] * s[3];
  Tensor<T> out({s[0], s[2], s[3]});
  for (std::size_t ch = 0; ch < s[0]; ++ch) {
    std::copy_n(batched.data() + (ch * s[1] + b) * hw, hw, out.data() + ch * hw);
  }
  return out;
}

template class Fusion<float>;
template class Fusion<double>;
template Tensor<float> stack_features<float>(const std::vector<const Tensor<float>*>&);
template Tensor<double> stack_features<double>(const std::vector<const Tensor<double>*>&);
template Tensor<float> unstack_sample<float>(const Tensor<float>&, std::size_t);
template Tensor<double> unstack_sample<double>(const Tensor<double>&, std::size_t);

}  // namespace facereenact
