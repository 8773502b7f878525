#ifndef MCGEN_MODELS_HPP
#define MCGEN_MODELS_HPP

#include "mcgen/models/common.hpp"
#include "mcgen/models/create.hpp"
#include "mcgen/models/gan.hpp"
#include "mcgen/models/glow.hpp"
#include "mcgen/models/pixelcnn.hpp"
#include "mcgen/models/vae.hpp"

namespace mcgen {

// model ids on the CLI surface map to (family, conditioning):
//   mcvae/mcgan/mcpixelcnn/mcglow -> MC subnetworks
//   cvae/cgan                     -> embedding-concatenation baselines
//   vae/gan/pixelcnn/glow         -> unconditional backbones
enum class ModelFamily { Vae, Gan, PixelCnn, Glow, Classifier };

struct ModelId {
  ModelFamily family;
  Conditioning cond;
};

inline ModelId parse_model_id(const std::string& id) {
  if (id == "mcvae") return {ModelFamily::Vae, Conditioning::Mc};
  if (id == "cvae") return {ModelFamily::Vae, Conditioning::Embed};
  if (id == "vae") return {ModelFamily::Vae, Conditioning::None};
  if (id == "mcgan") return {ModelFamily::Gan, Conditioning::Mc};
  if (id == "cgan") return {ModelFamily::Gan, Conditioning::Embed};
  if (id == "gan") return {ModelFamily::Gan, Conditioning::None};
  if (id == "mcpixelcnn") return {ModelFamily::PixelCnn, Conditioning::Mc};
  if (id == "pixelcnn") return {ModelFamily::PixelCnn, Conditioning::None};
  if (id == "mcglow") return {ModelFamily::Glow, Conditioning::Mc};
  if (id == "glow") return {ModelFamily::Glow, Conditioning::None};
  if (id == "classifier") return {ModelFamily::Classifier, Conditioning::None};
  throw ConfigError("unknown model id '" + id + "'");
}

}  // namespace mcgen

#endif  // MCGEN_MODELS_HPP
