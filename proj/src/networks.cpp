#include "sinbasis/networks.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sinbasis/rng.hpp"
#include "sinbasis/serialize.hpp"

namespace sinbasis::nets {

std::string_view to_string(Backbone b) {
  switch (b) {
    case Backbone::cnn: return "cnn";
    case Backbone::vit: return "vit";
    case Backbone::capsule: return "capsule";
  }
  return "cnn";
}

std::string_view to_string(HeadKind h) {
  return h == HeadKind::regression ? "regression" : "classification";
}

Backbone parse_backbone(std::string_view name) {
  for (Backbone b : {Backbone::cnn, Backbone::vit, Backbone::capsule})
    if (to_string(b) == name) return b;
  throw std::invalid_argument("unknown backbone '" + std::string(name) + "'");
}

HeadKind parse_head(std::string_view name) {
  for (HeadKind h : {HeadKind::regression, HeadKind::classification})
    if (to_string(h) == name) return h;
  throw std::invalid_argument("unknown head '" + std::string(name) + "'");
}

// ---- config ----------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model." + what); };
  if (in_channels == 0 || in_h == 0 || in_w == 0) fail("in_h/in_w/in_channels must be positive");
  if (head == HeadKind::classification && num_classes < 2) fail("classes must be at least 2");
  if (head_hidden == 0) fail("head_hidden must be positive");
  switch (backbone) {
    case Backbone::cnn: {
      if (cnn_channels.empty()) fail("cnn_channels must list at least one layer");
      if (cnn_kernel % 2 == 0) fail("cnn_kernel must be odd");
      const std::size_t f = cnn_pool ? (std::size_t{1} << cnn_channels.size()) : 1;
      if (in_h % f != 0 || in_w % f != 0) fail("cnn_channels: input not divisible by the pooling stack");
      break;
    }
    case Backbone::vit:
      if (patch == 0 || in_h % patch != 0 || in_w % patch != 0) fail("patch must divide the input extent");
      if (vit_heads == 0 || embed_dim % vit_heads != 0) fail("vit_heads must divide embed_dim");
      break;
    case Backbone::capsule:
      if (in_h % 2 != 0 || in_w % 2 != 0) fail("in_h/in_w must be even for the capsule stem");
      if (routing_iters < 1) fail("routing_iters must be at least 1");
      if (primary_caps == 0 || primary_dim == 0 || output_caps == 0 || output_dim == 0)
        fail("capsule counts must be positive");
      break;
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::ostringstream ch;
  for (std::size_t i = 0; i < cnn_channels.size(); ++i) ch << (i ? "," : "") << cnn_channels[i];
  auto s = [](auto v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"backbone", std::string(to_string(backbone))},
      {"basis", std::string(sinbasis::to_string(basis))},
      {"head", std::string(to_string(head))},
      {"classes", s(num_classes)},
      {"in_channels", s(in_channels)},
      {"in_h", s(in_h)},
      {"in_w", s(in_w)},
      {"cnn_channels", ch.str()},
      {"cnn_kernel", s(cnn_kernel)},
      {"cnn_pool", b(cnn_pool)},
      {"patch", s(patch)},
      {"embed_dim", s(embed_dim)},
      {"vit_depth", s(vit_depth)},
      {"vit_heads", s(vit_heads)},
      {"vit_mlp", s(vit_mlp)},
      {"capsule_stem", s(capsule_stem)},
      {"primary_caps", s(primary_caps)},
      {"primary_dim", s(primary_dim)},
      {"output_caps", s(output_caps)},
      {"output_dim", s(output_dim)},
      {"routing_iters", s(routing_iters)},
      {"capsule_sin_conv", b(capsule_sin_conv)},
      {"head_hidden", s(head_hidden)},
      {"seed", s(seed)},
  };
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long r = 0;
  try {
    r = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') {
    throw std::invalid_argument("model." + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(r);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("model." + key + ": expected true/false, got '" + v + "'");
}

}  // namespace

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "backbone") c.backbone = parse_backbone(v);
    else if (k == "basis") c.basis = parse_basis_mode(v);
    else if (k == "head") c.head = parse_head(v);
    else if (k == "classes") c.num_classes = parse_size(k, v);
    else if (k == "in_channels") c.in_channels = parse_size(k, v);
    else if (k == "in_h") c.in_h = parse_size(k, v);
    else if (k == "in_w") c.in_w = parse_size(k, v);
    else if (k == "cnn_channels") {
      c.cnn_channels.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) c.cnn_channels.push_back(parse_size(k, item));
    } else if (k == "cnn_kernel") c.cnn_kernel = parse_size(k, v);
    else if (k == "cnn_pool") c.cnn_pool = parse_bool(k, v);
    else if (k == "patch") c.patch = parse_size(k, v);
    else if (k == "embed_dim") c.embed_dim = parse_size(k, v);
    else if (k == "vit_depth") c.vit_depth = parse_size(k, v);
    else if (k == "vit_heads") c.vit_heads = parse_size(k, v);
    else if (k == "vit_mlp") c.vit_mlp = parse_size(k, v);
    else if (k == "capsule_stem") c.capsule_stem = parse_size(k, v);
    else if (k == "primary_caps") c.primary_caps = parse_size(k, v);
    else if (k == "primary_dim") c.primary_dim = parse_size(k, v);
    else if (k == "output_caps") c.output_caps = parse_size(k, v);
    else if (k == "output_dim") c.output_dim = parse_size(k, v);
    else if (k == "routing_iters") c.routing_iters = parse_size(k, v);
    else if (k == "capsule_sin_conv") c.capsule_sin_conv = parse_bool(k, v);
    else if (k == "head_hidden") c.head_hidden = parse_size(k, v);
    else if (k == "seed") c.seed = parse_size(k, v);
    else throw std::invalid_argument("model." + k + ": unknown key");
  }
  return c;
}

// ---- building blocks ---------------------------------------------------------

Tensor sin_conv_layer(const Tensor& x, const WeightMatrix& wm, const Tensor& bias,
                      const Conv2dOptions& opt, bool relu_after) {
  const Tensor y = conv2d(x, effective_weight(wm), bias, opt);
  return relu_after ? relu(y) : y;
}

Tensor sin_vit_embed(const Tensor& patches, const WeightMatrix& e, const Tensor& pos) {
  const Tensor tokens = linear(patches, effective_weight(e), Tensor());
  if (!pos.defined()) return tokens;
  if (pos.rank() != 2 || tokens.rank() < 2 || pos.dim(0) != tokens.dim(tokens.rank() - 2) ||
      pos.dim(1) != tokens.shape().back()) {
    throw DimensionError("sin_vit_embed: positional term " + shape_str(pos.shape()) + " does not match tokens " +
                         shape_str(tokens.shape()));
  }
  if (tokens.rank() == 2) return add(tokens, pos);
  const std::size_t batch = tokens.numel() / pos.numel();
  Shape lifted{1, pos.dim(0), pos.dim(1)};
  const Tensor flat = reshape(tokens, {batch, pos.dim(0), pos.dim(1)});
  return reshape(add(flat, expand(reshape(pos, lifted), flat.shape())), tokens.shape());
}

RoutingResult capsule_route(const Tensor& votes, const Tensor& u, std::size_t out_caps,
                            std::size_t iterations) {
  if (iterations < 1) throw ContractError("capsule_route: iterations must be at least 1");
  if (u.rank() != 3 || votes.rank() != 3 || votes.dim(0) != u.dim(1) || votes.dim(2) != u.dim(2) ||
      out_caps == 0 || votes.dim(1) % out_caps != 0) {
    throw DimensionError("capsule_route: votes " + shape_str(votes.shape()) + " incompatible with capsules " +
                         shape_str(u.shape()));
  }
  const std::size_t batch = u.dim(0), in_caps = u.dim(1), out_dim = votes.dim(1) / out_caps;
  // û[b,i,j,:] = W_ij · u[b,i,:]
  const Tensor stacked = bmm(votes, permute(u, {1, 2, 0}));  // [I, J·D, B]
  const Tensor u_hat = permute(reshape(stacked, {in_caps, out_caps, out_dim, batch}), {3, 0, 1, 2});
  const Shape full{batch, in_caps, out_caps, out_dim};

  RoutingResult r;
  Tensor logits = Tensor::zeros({batch, in_caps, out_caps});
  for (std::size_t it = 0; it < iterations; ++it) {
    const Tensor c = softmax_rows(logits);
    r.couplings.push_back(c);
    const Tensor s = sum_axis(mul(expand(reshape(c, {batch, in_caps, out_caps, 1}), full), u_hat), 1);
    r.v = squash(s);
    if (it + 1 < iterations) {
      const Tensor agree = sum_axis(mul(u_hat, expand(reshape(r.v, {batch, 1, out_caps, out_dim}), full)), 3);
      logits = add(logits, agree);
    }
  }
  return r;
}

// ---- model -------------------------------------------------------------------

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t features = 0;
  switch (cfg_.backbone) {
    case Backbone::cnn: {
      std::size_t in = cfg_.in_channels, h = cfg_.in_h, w = cfg_.in_w;
      for (std::size_t l = 0; l < cfg_.cnn_channels.size(); ++l) {
        const std::string n = "conv" + std::to_string(l);
        add_weight(n + ".weight", {cfg_.cnn_channels[l], in, cfg_.cnn_kernel, cfg_.cnn_kernel}, cfg_.basis);
        add_tensor(n + ".bias", Tensor::zeros({cfg_.cnn_channels[l]}, true));
        in = cfg_.cnn_channels[l];
        if (cfg_.cnn_pool) h /= 2, w /= 2;
      }
      // Regression keeps positions (flatten); classification pools them away.
      features = cfg_.head == HeadKind::regression ? in * h * w : in;
      break;
    }
    case Backbone::vit: {
      const std::size_t d = cfg_.embed_dim;
      const std::size_t tokens = (cfg_.in_h / cfg_.patch) * (cfg_.in_w / cfg_.patch);
      add_weight("embed.weight", {d, cfg_.in_channels * cfg_.patch * cfg_.patch}, cfg_.basis);
      Rng rng(derive_seed(cfg_.seed, "embed.pos"));
      std::vector<double> pos(tokens * d);
      for (auto& p : pos) p = 0.02 * rng.normal();
      add_tensor("embed.pos", Tensor({tokens, d}, std::move(pos), true));
      for (std::size_t l = 0; l < cfg_.vit_depth; ++l) {
        const std::string n = "block" + std::to_string(l) + ".";
        for (const char* ln : {"ln1", "ln2"}) {
          add_tensor(n + ln + ".gamma", Tensor::full({d}, 1.0, true));
          add_tensor(n + ln + ".beta", Tensor::zeros({d}, true));
        }
        for (const char* p : {"q", "k", "v", "o"}) {
          add_weight(n + "attn." + p + ".weight", {d, d}, BasisMode::plain);
          add_tensor(n + "attn." + p + ".bias", Tensor::zeros({d}, true));
        }
        add_weight(n + "mlp.fc1.weight", {cfg_.vit_mlp, d}, BasisMode::plain);
        add_tensor(n + "mlp.fc1.bias", Tensor::zeros({cfg_.vit_mlp}, true));
        add_weight(n + "mlp.fc2.weight", {d, cfg_.vit_mlp}, BasisMode::plain);
        add_tensor(n + "mlp.fc2.bias", Tensor::zeros({d}, true));
      }
      add_tensor("final_ln.gamma", Tensor::full({d}, 1.0, true));
      add_tensor("final_ln.beta", Tensor::zeros({d}, true));
      features = cfg_.head == HeadKind::regression ? tokens * d : d;
      break;
    }
    case Backbone::capsule: {
      add_weight("stem.weight", {cfg_.capsule_stem, cfg_.in_channels, 3, 3},
                 cfg_.capsule_sin_conv ? cfg_.basis : BasisMode::plain);
      add_tensor("stem.bias", Tensor::zeros({cfg_.capsule_stem}, true));
      const std::size_t stem_out = cfg_.capsule_stem * (cfg_.in_h / 2) * (cfg_.in_w / 2);
      add_weight("primary.weight", {cfg_.primary_caps * cfg_.primary_dim, stem_out}, BasisMode::plain);
      add_tensor("primary.bias", Tensor::zeros({cfg_.primary_caps * cfg_.primary_dim}, true));
      add_weight("votes.weight", {cfg_.primary_caps * cfg_.output_caps * cfg_.output_dim, cfg_.primary_dim},
                 cfg_.basis);
      features = cfg_.output_caps * cfg_.output_dim;
      break;
    }
  }
  add_weight("head.fc1.weight", {cfg_.head_hidden, features}, BasisMode::plain);
  add_tensor("head.fc1.bias", Tensor::zeros({cfg_.head_hidden}, true));
  add_weight("head.fc2.weight", {cfg_.outputs(), cfg_.head_hidden}, BasisMode::plain);
  add_tensor("head.fc2.bias", Tensor::zeros({cfg_.outputs()}, true));
}

void Model::add_weight(const std::string& name, Shape shape, BasisMode mode) {
  weights_.emplace(name, WeightMatrix::initialized(std::move(shape), mode, derive_seed(cfg_.seed, name)));
}

void Model::add_tensor(const std::string& name, Tensor t) { tensors_.emplace(name, std::move(t)); }

const WeightMatrix& Model::w(const std::string& name) const { return weights_.at(name); }
const Tensor& Model::t(const std::string& name) const { return tensors_.at(name); }
Tensor Model::eff(const std::string& name) const { return effective_weight(weights_.at(name)); }

Tensor Model::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.in_h || x.dim(3) != cfg_.in_w) {
    throw DimensionError("Model::forward: expected [B," + std::to_string(cfg_.in_channels) + "," +
                         std::to_string(cfg_.in_h) + "," + std::to_string(cfg_.in_w) + "], got " +
                         shape_str(x.shape()));
  }
  switch (cfg_.backbone) {
    case Backbone::cnn: return head(cnn_features(x));
    case Backbone::vit: return head(vit_features(x));
    case Backbone::capsule: return head(capsule_features(x));
  }
  throw ContractError("Model::forward: unknown backbone");
}

Tensor Model::cnn_features(const Tensor& x) const {
  Tensor h = x;
  const Conv2dOptions opt{.stride = 1, .padding = cfg_.cnn_kernel / 2};
  for (std::size_t l = 0; l < cfg_.cnn_channels.size(); ++l) {
    const std::string n = "conv" + std::to_string(l);
    h = sin_conv_layer(h, w(n + ".weight"), t(n + ".bias"), opt);
    if (cfg_.cnn_pool) h = max_pool2d(h, 2);
  }
  if (cfg_.head == HeadKind::classification) return global_avg_pool(h);
  return reshape(h, {h.dim(0), h.numel() / h.dim(0)});
}

Tensor Model::vit_features(const Tensor& x) const {
  const std::size_t batch = x.dim(0), d = cfg_.embed_dim, heads = cfg_.vit_heads, dh = d / heads;
  Tensor z = sin_vit_embed(patchify(x, cfg_.patch), w("embed.weight"), t("embed.pos"));
  const std::size_t n = z.dim(1);
  auto split = [&](const Tensor& m) {  // [B,N,D] -> [B·H, N, dh]
    return reshape(permute(reshape(m, {batch, n, heads, dh}), {0, 2, 1, 3}), {batch * heads, n, dh});
  };
  for (std::size_t l = 0; l < cfg_.vit_depth; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    const Tensor h = layer_norm(z, t(p + "ln1.gamma"), t(p + "ln1.beta"));
    const Tensor q = split(linear(h, eff(p + "attn.q.weight"), t(p + "attn.q.bias")));
    const Tensor k = split(linear(h, eff(p + "attn.k.weight"), t(p + "attn.k.bias")));
    const Tensor v = split(linear(h, eff(p + "attn.v.weight"), t(p + "attn.v.bias")));
    const Tensor a = softmax_rows(scale(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh))));
    const Tensor merged = reshape(permute(reshape(bmm(a, v), {batch, heads, n, dh}), {0, 2, 1, 3}), {batch, n, d});
    z = add(z, linear(merged, eff(p + "attn.o.weight"), t(p + "attn.o.bias")));
    const Tensor h2 = layer_norm(z, t(p + "ln2.gamma"), t(p + "ln2.beta"));
    const Tensor mlp = linear(relu(linear(h2, eff(p + "mlp.fc1.weight"), t(p + "mlp.fc1.bias"))),
                              eff(p + "mlp.fc2.weight"), t(p + "mlp.fc2.bias"));
    z = add(z, mlp);
  }
  z = layer_norm(z, t("final_ln.gamma"), t("final_ln.beta"));
  if (cfg_.head == HeadKind::classification) return scale(sum_axis(z, 1), 1.0 / static_cast<double>(n));
  return reshape(z, {batch, n * d});
}

Tensor Model::capsule_features(const Tensor& x) const {
  const std::size_t batch = x.dim(0);
  Tensor h = sin_conv_layer(x, w("stem.weight"), t("stem.bias"), Conv2dOptions{.padding = 1});
  h = max_pool2d(h, 2);
  h = linear(reshape(h, {batch, h.numel() / batch}), eff("primary.weight"), t("primary.bias"));
  const Tensor u = squash(reshape(h, {batch, cfg_.primary_caps, cfg_.primary_dim}));
  const Tensor votes = reshape(eff("votes.weight"),
                               {cfg_.primary_caps, cfg_.output_caps * cfg_.output_dim, cfg_.primary_dim});
  const RoutingResult r = capsule_route(votes, u, cfg_.output_caps, cfg_.routing_iters);
  return reshape(r.v, {batch, cfg_.output_caps * cfg_.output_dim});
}

Tensor Model::head(const Tensor& features) const {
  const Tensor hidden = relu(linear(features, eff("head.fc1.weight"), t("head.fc1.bias")));
  return linear(hidden, eff("head.fc2.weight"), t("head.fc2.bias"));
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::map<std::string, Tensor> all;
  for (const auto& [name, wm] : weights_) {
    all.emplace(name, wm.raw());
    if (wm.tunable()) {
      all.emplace(name + ".a", wm.tunable()->a);
      all.emplace(name + ".b", wm.tunable()->b);
      all.emplace(name + ".phi", wm.tunable()->phi);
    }
  }
  for (const auto& [name, tensor] : tensors_) all.emplace(name, tensor);
  std::vector<NamedTensor> out;
  for (auto& [name, tensor] : all) out.push_back({name, tensor});
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> s = named_parameters();
  for (const auto& [name, wm] : weights_) {
    if (wm.mode() == BasisMode::random_fourier) {
      s.push_back({name + ".fourier_rows", Tensor({wm.rows()}, wm.cosine_rows())});
    }
  }
  return s;
}

void Model::load_state(const std::vector<NamedTensor>& state) {
  std::map<std::string, Tensor> incoming;
  for (const auto& e : state) incoming.emplace(e.name, e.tensor);
  auto take = [&](const std::string& name) -> const Tensor& {
    auto it = incoming.find(name);
    if (it == incoming.end()) throw ContractError("load_state: missing tensor '" + name + "'");
    return it->second;
  };
  auto copy_into = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = take(name);
    if (src.shape() != dst.shape()) {
      throw DimensionError("load_state: '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                           shape_str(dst.shape()));
    }
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  };
  for (auto& [name, wm] : weights_) {
    copy_into(name, wm.raw());
    if (wm.tunable()) {
      copy_into(name + ".a", wm.tunable()->a);
      copy_into(name + ".b", wm.tunable()->b);
      copy_into(name + ".phi", wm.tunable()->phi);
    }
    if (wm.mode() == BasisMode::random_fourier) {
      const Tensor& rows = take(name + ".fourier_rows");
      if (rows.numel() != wm.rows()) throw DimensionError("load_state: '" + name + ".fourier_rows' size mismatch");
      wm.set_cosine_rows({rows.data().begin(), rows.data().end()});
    }
  }
  for (auto& [name, tensor] : tensors_) copy_into(name, tensor);
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model) {
  std::filesystem::create_directories(dir);
  for (const auto& e : model.state()) save_tensor(dir / (e.name + ".sbt"), e.tensor);
  boost::property_tree::ptree pt;
  for (const auto& [k, v] : model.config().to_map()) pt.put("model." + k, v);
  boost::property_tree::write_ini((dir / "model.ini").string(), pt);
}

Model load_checkpoint(const std::filesystem::path& dir) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini((dir / "model.ini").string(), pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ContractError("load_checkpoint: " + std::string(e.what()));
  }
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : pt.get_child("model", {})) kv[k] = v.data();
  Model model(ModelConfig::from_map(kv));
  std::vector<NamedTensor> state;
  for (const auto& e : model.state()) state.push_back({e.name, load_tensor(dir / (e.name + ".sbt"))});
  model.load_state(state);
  return model;
}

}  // namespace sinbasis::nets
