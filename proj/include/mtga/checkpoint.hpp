#pragma once
// Versioned named-array container: a fixed magic + version header, a JSON
// manifest listing (name, dtype, shape, offset, nbytes) per array, then the
// raw little-endian payload. Used for model, generator, and discriminator
// checkpoints.

#include <map>
#include <string>
#include <vector>

#include "mtga/attacker.hpp"
#include "mtga/reid_models.hpp"
#include "mtga/tensor.hpp"

namespace mtga::ckpt {

struct Container {
  std::string kind;                            // embed_model | generator | discriminator
  std::map<std::string, std::string> meta;     // free-form string metadata
  std::vector<std::pair<std::string, Tensor<float>>> arrays;  // insertion order preserved
};

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

void save_model(const std::string& path, const reid::EmbedNet<float>& net);
reid::EmbedNet<float> load_model(const std::string& path);

void save_generator(const std::string& path, const attacker::GeneratorNet<float>& gen);
attacker::GeneratorNet<float> load_generator(const std::string& path);

void save_discriminator(const std::string& path, const attacker::DiscriminatorNet<float>& dis);
attacker::DiscriminatorNet<float> load_discriminator(const std::string& path);

}  // namespace mtga::ckpt
