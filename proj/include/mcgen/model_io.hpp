#ifndef MCGEN_MODEL_IO_HPP
#define MCGEN_MODEL_IO_HPP

#include <unordered_set>

#include "mcgen/checkpoint.hpp"
#include "mcgen/training.hpp"

namespace mcgen {

template <typename S>
constexpr const char* dtype_name() {
  if constexpr (sizeof(S) == 4) {
    return "f32";
  } else {
    return "f64";
  }
}

// FNV over raw parameter payloads in collection order; freezes a model
// identity (used to pin the evaluation classifier across metric runs).
template <typename S>
std::uint64_t params_checksum(const ParamRefs<S>& refs) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : refs.params) {
    for (char ch : name) {
      h ^= static_cast<std::uint8_t>(ch);
      h *= 0x100000001b3ull;
    }
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
    for (std::size_t i = 0; i < t.data().size_bytes(); ++i) {
      h ^= raw[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

inline std::map<std::string, std::string> hyper_to_kv(const ModelHyper& h) {
  std::map<std::string, std::string> kv;
  kv["modes"] = std::to_string(h.modes);
  kv["channels"] = std::to_string(h.channels);
  kv["image"] = std::to_string(h.image);
  kv["latent"] = std::to_string(h.latent);
  kv["embed_dim"] = std::to_string(h.embed_dim);
  kv["cond"] = conditioning_name(h.cond);
  kv["use_norm"] = h.use_norm ? "1" : "0";
  kv["mc_on_g"] = h.mc_on_g ? "1" : "0";
  kv["mc_on_d"] = h.mc_on_d ? "1" : "0";
  kv["ones_codebooks"] = h.ones_codebooks ? "1" : "0";
  kv["levels"] = std::to_string(h.levels);
  kv["couplings"] = std::to_string(h.couplings);
  kv["glow_hidden"] = std::to_string(h.glow_hidden);
  kv["pcnn_hidden"] = std::to_string(h.pcnn_hidden);
  return kv;
}

inline ModelHyper hyper_from_kv(const std::map<std::string, std::string>& kv) {
  ModelHyper h;
  h.modes = std::stoi(kv.at("modes"));
  h.channels = std::stoi(kv.at("channels"));
  h.image = std::stoll(kv.at("image"));
  h.latent = std::stoll(kv.at("latent"));
  h.embed_dim = std::stoi(kv.at("embed_dim"));
  h.cond = conditioning_from(kv.at("cond"));
  h.use_norm = kv.at("use_norm") == "1";
  h.mc_on_g = kv.at("mc_on_g") == "1";
  h.mc_on_d = kv.at("mc_on_d") == "1";
  h.ones_codebooks = kv.at("ones_codebooks") == "1";
  h.levels = std::stoll(kv.at("levels"));
  h.couplings = std::stoi(kv.at("couplings"));
  h.glow_hidden = std::stoll(kv.at("glow_hidden"));
  h.pcnn_hidden = std::stoll(kv.at("pcnn_hidden"));
  return h;
}

inline std::map<std::string, std::string> config_to_kv(const TrainConfig& c) {
  std::map<std::string, std::string> kv;
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["lr"] = std::to_string(c.lr);
  kv["beta1"] = std::to_string(c.beta1);
  kv["beta2"] = std::to_string(c.beta2);
  kv["loss_id"] = c.loss_id;
  kv["epochs"] = std::to_string(c.epochs);
  kv["seed"] = std::to_string(c.seed);
  kv["model_id"] = c.model_id;
  kv["dataset_dir"] = c.dataset_dir;
  kv["sequential_modes"] = c.sequential_modes ? "1" : "0";
  kv["codebook_mode"] = c.codebook_mode;
  kv["ablate_mc"] = c.ablate_mc;
  return kv;
}

inline TrainConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  c.batch_size = std::stoll(kv.at("batch_size"));
  c.lr = std::stod(kv.at("lr"));
  c.beta1 = std::stod(kv.at("beta1"));
  c.beta2 = std::stod(kv.at("beta2"));
  c.loss_id = kv.at("loss_id");
  c.epochs = std::stoi(kv.at("epochs"));
  c.seed = std::stoull(kv.at("seed"));
  c.model_id = kv.at("model_id");
  c.dataset_dir = kv.at("dataset_dir");
  c.sequential_modes = kv.at("sequential_modes") == "1";
  c.codebook_mode = kv.at("codebook_mode");
  c.ablate_mc = kv.at("ablate_mc");
  return c;
}

template <typename S>
Container trainer_to_container(const TrainerState<S>& st) {
  Container c;
  auto refs = st.params();
  std::map<std::string, std::string> meta = hyper_to_kv(st.hyper);
  meta["engine_version"] = kEngineVersion;
  meta["dtype"] = dtype_name<S>();
  meta["epoch"] = std::to_string(st.epochs_done);
  meta["param_checksum"] = std::to_string(params_checksum(refs));
  if (st.opt) meta["opt_t"] = std::to_string(st.opt->t);
  if (st.opt_g) meta["optg_t"] = std::to_string(st.opt_g->t);
  if (st.opt_d) meta["optd_t"] = std::to_string(st.opt_d->t);
  c.sections.push_back(text_section("meta", format_kv(meta)));
  c.sections.push_back(text_section("train_config", format_kv(config_to_kv(st.cfg))));
  for (const auto& [name, t] : refs.params) {
    Section s;
    s.name = "param." + name;
    s.kind = tensor_kind<S>();
    s.bytes = encode_tensor(t);
    c.sections.push_back(std::move(s));
  }
  for (const auto& [name, t] : refs.buffers) {
    Section s;
    s.name = "buffer." + name;
    s.kind = tensor_kind<S>();
    s.bytes = encode_tensor(t);
    c.sections.push_back(std::move(s));
  }
  auto books = const_cast<TrainerState<S>&>(st).books();
  for (const auto& [name, book] : books) {
    Section s;
    s.name = "codebook." + name;
    s.kind = SectionKind::Codebook;
    s.bytes = serialize_codebook(*book);
    c.sections.push_back(std::move(s));
  }
  auto emit_adam = [&](const std::string& prefix, const Adam<S>& opt,
                       const ParamRefs<S>& prefs) {
    if (opt.m.size() != prefs.params.size()) {
      throw Error("checkpoint: optimizer state misaligned");
    }
    for (std::size_t i = 0; i < prefs.params.size(); ++i) {
      Section sm;
      sm.name = prefix + ".m." + prefs.params[i].first;
      sm.kind = tensor_kind<S>();
      sm.bytes = encode_tensor(opt.m[i]);
      c.sections.push_back(std::move(sm));
      Section sv;
      sv.name = prefix + ".v." + prefs.params[i].first;
      sv.kind = tensor_kind<S>();
      sv.bytes = encode_tensor(opt.v[i]);
      c.sections.push_back(std::move(sv));
    }
  };
  if (st.opt) emit_adam("opt", *st.opt, refs);
  if (st.gan) {
    if (st.opt_g) emit_adam("optg", *st.opt_g, st.gan->g_params());
    if (st.opt_d) emit_adam("optd", *st.opt_d, st.gan->d_params());
  }
  return c;
}

namespace model_io_detail {

template <typename S>
void fill_tensor(Tensor<S>& dst, const Section& s, const std::string& what) {
  if (s.kind != tensor_kind<S>()) {
    throw IoError("checkpoint: section '" + s.name + "' has the wrong dtype for " +
                  std::string(dtype_name<S>()));
  }
  Tensor<S> t = decode_tensor<S>(s.bytes);
  if (t.shape() != dst.shape()) {
    throw IoError("checkpoint: " + what + " shape " + shape_str(t.shape()) +
                  " does not match model " + shape_str(dst.shape()));
  }
  std::memcpy(dst.mutable_data().data(), t.data().data(),
              t.data().size_bytes());
}

template <typename S>
void load_refs(const Container& c, ParamRefs<S>& refs) {
  std::unordered_set<std::string> expected;
  for (auto& [name, t] : refs.params) {
    expected.insert("param." + name);
    fill_tensor(t, c.find("param." + name), name);
  }
  for (auto& [name, t] : refs.buffers) {
    expected.insert("buffer." + name);
    fill_tensor(t, c.find("buffer." + name), name);
  }
  // Reject unknown parameter payloads: the name set must match exactly.
  for (const auto& s : c.sections) {
    if ((s.name.rfind("param.", 0) == 0 || s.name.rfind("buffer.", 0) == 0) &&
        !expected.count(s.name)) {
      throw IoError("checkpoint: unexpected section '" + s.name +
                    "' for this model");
    }
  }
}

template <typename S>
void load_adam(const Container& c, const std::string& prefix, Adam<S>& opt,
               const ParamRefs<S>& refs, Index t_steps) {
  opt.t = t_steps;
  for (std::size_t i = 0; i < refs.params.size(); ++i) {
    fill_tensor(opt.m[i], c.find(prefix + ".m." + refs.params[i].first),
                refs.params[i].first);
    fill_tensor(opt.v[i], c.find(prefix + ".v." + refs.params[i].first),
                refs.params[i].first);
  }
}

}  // namespace model_io_detail

template <typename S>
TrainerState<S> trainer_from_container(const Container& c) {
  auto meta = parse_kv(section_text(c.find("meta")));
  if (meta.at("dtype") != dtype_name<S>()) {
    throw IoError("checkpoint: stored dtype " + meta.at("dtype") +
                  " does not match requested " + dtype_name<S>());
  }
  TrainConfig cfg = config_from_kv(parse_kv(section_text(c.find("train_config"))));
  ModelHyper hyper = hyper_from_kv(meta);
  TrainerState<S> st;
  st.cfg = cfg;
  st.hyper = hyper;
  const ModelId id = parse_model_id(cfg.model_id);
  switch (id.family) {
    case ModelFamily::Vae:
      st.vae = McVae<S>::build(hyper, cfg.seed);
      st.opt = Adam<S>::make(st.vae->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::Gan:
      st.gan = McGan<S>::build(hyper, cfg.seed);
      st.opt_g = Adam<S>::make(st.gan->g_params(), cfg.lr, cfg.beta1, cfg.beta2);
      st.opt_d = Adam<S>::make(st.gan->d_params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::PixelCnn:
      st.pcnn = McPixelCnn<S>::build(hyper, cfg.seed);
      st.opt = Adam<S>::make(st.pcnn->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::Glow:
      st.glow = McGlow<S>::build(hyper, cfg.seed);
      st.opt = Adam<S>::make(st.glow->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::Classifier:
      st.clf = EvalClassifier<S>::build(hyper.modes, hyper.channels, hyper.image,
                                        cfg.seed);
      st.opt = Adam<S>::make(st.clf->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
  }
  st.epochs_done = std::stoll(meta.at("epoch"));
  auto refs = st.params();
  model_io_detail::load_refs(c, refs);
  for (auto& [name, book] : st.books()) {
    *book = deserialize_codebook(c.find("codebook." + name).bytes);
  }
  if (st.opt && meta.count("opt_t")) {
    model_io_detail::load_adam(c, "opt", *st.opt, refs,
                               std::stoll(meta.at("opt_t")));
  }
  if (st.gan) {
    auto gr = st.gan->g_params();
    auto dr = st.gan->d_params();
    if (meta.count("optg_t")) {
      model_io_detail::load_adam(c, "optg", *st.opt_g, gr,
                                 std::stoll(meta.at("optg_t")));
    }
    if (meta.count("optd_t")) {
      model_io_detail::load_adam(c, "optd", *st.opt_d, dr,
                                 std::stoll(meta.at("optd_t")));
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Orchestrated multi-epoch run with divergence fallback
// ---------------------------------------------------------------------------

struct DivergenceInfo {
  bool diverged = false;
  int epoch = -1;
  std::string message;
};

template <typename S>
struct TrainResult {
  std::vector<EpochRecord> curve;
  DivergenceInfo divergence;
  Container last_good;  // end-of-run state, or the last finite epoch on abort
};

template <typename S>
TrainResult<S> train(TrainerState<S>& st, const Dataset<S>& ds) {
  TrainResult<S> result;
  result.last_good = trainer_to_container(st);
  const Index target = st.epochs_done + st.cfg.epochs;
  for (Index e = st.epochs_done; e < target; ++e) {
    try {
      result.curve.push_back(run_epoch(st, ds, static_cast<int>(e)));
    } catch (const ValueError& err) {
      result.divergence.diverged = true;
      result.divergence.epoch = static_cast<int>(e);
      result.divergence.message = err.what();
      return result;  // last_good holds the previous epoch's state
    }
    result.last_good = trainer_to_container(st);
  }
  return result;
}

}  // namespace mcgen

#endif  // MCGEN_MODEL_IO_HPP
