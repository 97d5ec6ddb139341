#include "mtga/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mtga::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'G', 'A', 'R', 'R', 'Y', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian raw data");

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_container(const std::string& path, const Container& c) {
  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["kind"] = c.kind;
  manifest["meta"] = c.meta;
  nlohmann::json arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.arrays) {
    nlohmann::json a;
    a["name"] = name;
    a["dtype"] = "f32";
    a["shape"] = t.shape();
    a["offset"] = offset;
    a["nbytes"] = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    arrays.push_back(a);
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  manifest["arrays"] = arrays;
  const std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(mtext.size()));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& [name, t] : c.arrays)
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint container: " + path);
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " +
                             path);
  const auto mlen = read_pod<std::uint64_t>(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw std::runtime_error("truncated checkpoint manifest: " + path);
  nlohmann::json manifest = nlohmann::json::parse(mtext);

  Container c;
  c.kind = manifest.at("kind").get<std::string>();
  c.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
  const std::streampos payload_start = is.tellg();
  for (const auto& a : manifest.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    if (a.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("unsupported dtype in " + path);
    Shape shape = a.at("shape").get<Shape>();
    Tensor<float> t(shape);
    const auto nbytes = a.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel()) * sizeof(float))
      throw std::runtime_error("array size mismatch for '" + name + "' in " + path);
    is.seekg(payload_start + static_cast<std::streamoff>(a.at("offset").get<std::uint64_t>()));
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(nbytes));
    if (!is) throw std::runtime_error("truncated checkpoint payload: " + path);
    c.arrays.emplace_back(name, std::move(t));
  }
  return c;
}

namespace {

void fill_named(const Container& c, nn::ParamSet<float>& params, const std::string& what) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : c.arrays) by_name[name] = &t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = by_name.find(params.names[i]);
    if (it == by_name.end())
      throw std::runtime_error(what + ": checkpoint is missing array '" + params.names[i] + "'");
    if (!(it->second->shape() == params.values[i].shape()))
      throw std::runtime_error(what + ": shape mismatch for array '" + params.names[i] + "'");
    params.values[i] = *it->second;
  }
}

const Tensor<float>& named(const Container& c, const std::string& name, const std::string& what) {
  for (const auto& [n, t] : c.arrays)
    if (n == name) return t;
  throw std::runtime_error(what + ": checkpoint is missing array '" + name + "'");
}

}  // namespace

void save_model(const std::string& path, const reid::EmbedNet<float>& net) {
  Container c;
  c.kind = "embed_model";
  c.meta["arch_family"] = reid::family_name(net.family);
  c.meta["variant_id"] = net.variant_id;
  c.meta["train_domain"] = net.train_domain;
  c.meta["embed_dim"] = std::to_string(reid::kEmbedDim);
  for (std::size_t i = 0; i < net.params.size(); ++i)
    c.arrays.emplace_back(net.params.names[i], net.params.values[i]);
  for (std::size_t l = 0; l < net.bn_buffers.size(); ++l) {
    c.arrays.emplace_back("bn" + std::to_string(l) + ".running_mean",
                          net.bn_buffers[l].running_mean);
    c.arrays.emplace_back("bn" + std::to_string(l) + ".running_var", net.bn_buffers[l].running_var);
  }
  save_container(path, c);
}

reid::EmbedNet<float> load_model(const std::string& path) {
  Container c = load_container(path);
  if (c.kind != "embed_model")
    throw std::runtime_error("expected an embed_model checkpoint: " + path);
  auto net = reid::EmbedNet<float>::build(c.meta.at("variant_id"), 0);
  net.train_domain = c.meta.at("train_domain");
  fill_named(c, net.params, path);
  for (std::size_t l = 0; l < net.bn_buffers.size(); ++l) {
    net.bn_buffers[l].running_mean = named(c, "bn" + std::to_string(l) + ".running_mean", path);
    net.bn_buffers[l].running_var = named(c, "bn" + std::to_string(l) + ".running_var", path);
  }
  return net;
}

void save_generator(const std::string& path, const attacker::GeneratorNet<float>& gen) {
  Container c;
  c.kind = "generator";
  c.meta["epsilon"] = std::to_string(gen.epsilon);
  for (std::size_t i = 0; i < gen.params.size(); ++i)
    c.arrays.emplace_back(gen.params.names[i], gen.params.values[i]);
  save_container(path, c);
}

attacker::GeneratorNet<float> load_generator(const std::string& path) {
  Container c = load_container(path);
  if (c.kind != "generator") throw std::runtime_error("expected a generator checkpoint: " + path);
  auto gen = attacker::GeneratorNet<float>::build(std::stod(c.meta.at("epsilon")), 0);
  fill_named(c, gen.params, path);
  return gen;
}

void save_discriminator(const std::string& path, const attacker::DiscriminatorNet<float>& dis) {
  Container c;
  c.kind = "discriminator";
  for (std::size_t i = 0; i < dis.params.size(); ++i)
    c.arrays.emplace_back(dis.params.names[i], dis.params.values[i]);
  save_container(path, c);
}

attacker::DiscriminatorNet<float> load_discriminator(const std::string& path) {
  Container c = load_container(path);
  if (c.kind != "discriminator")
    throw std::runtime_error("expected a discriminator checkpoint: " + path);
  auto dis = attacker::DiscriminatorNet<float>::build(0);
  fill_named(c, dis.params, path);
  return dis;
}

}  // namespace mtga::ckpt
