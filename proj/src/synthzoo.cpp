#include "mtga/synthzoo.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <filesystem>
#include <stdexcept>

#include "mtga/image_io.hpp"

namespace mtga::synthzoo {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Rec. 601 RGB<->YIQ. The inverse is computed from the forward matrix so the
// round trip is exact to double precision and hue rotation preserves luma.
struct ColorMatrices {
  double fwd[3][3];
  double inv[3][3];
  ColorMatrices() {
    const double f[3][3] = {{0.299, 0.587, 0.114},
                            {0.595716, -0.274453, -0.321263},
                            {0.211456, -0.522591, 0.311135}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) fwd[i][j] = f[i][j];
    const double det = f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1]) -
                       f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0]) +
                       f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0]);
    const double adj[3][3] = {
        {f[1][1] * f[2][2] - f[1][2] * f[2][1], f[0][2] * f[2][1] - f[0][1] * f[2][2],
         f[0][1] * f[1][2] - f[0][2] * f[1][1]},
        {f[1][2] * f[2][0] - f[1][0] * f[2][2], f[0][0] * f[2][2] - f[0][2] * f[2][0],
         f[0][2] * f[1][0] - f[0][0] * f[1][2]},
        {f[1][0] * f[2][1] - f[1][1] * f[2][0], f[0][1] * f[2][0] - f[0][0] * f[2][1],
         f[0][0] * f[1][1] - f[0][1] * f[1][0]}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) inv[i][j] = adj[i][j] / det;
  }
};

const ColorMatrices& cm() {
  static ColorMatrices m;
  return m;
}

std::array<double, 3> yiq_to_rgb(double y, double i, double q) {
  const auto& m = cm().inv;
  return {m[0][0] * y + m[0][1] * i + m[0][2] * q, m[1][0] * y + m[1][1] * i + m[1][2] * q,
          m[2][0] * y + m[2][1] * i + m[2][2] * q};
}

std::uint64_t mix_hash(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL);
  return splitmix64(s);
}

// Colors are drawn in (luma, chroma) form with chroma norm <= 0.13 so any hue
// rotation stays inside the RGB gamut.
std::array<double, 3> sample_body_color(Rng& rng, double y_lo, double y_hi, double c_lo,
                                        double c_hi) {
  const double y = rng.uniform(y_lo, y_hi);
  const double c = rng.uniform(c_lo, c_hi);
  const double a = rng.uniform(0.0, 2.0 * kPi);
  return yiq_to_rgb(y, c * std::cos(a), c * std::sin(a));
}

struct IdentityLook {
  std::array<double, 3> torso, legs, head;
  double torso_hw, head_rx, head_ry, head_cy;
  double shoulder_y, hip_y, leg_bottom, leg_gap, leg_hw;
};

IdentityLook identity_look(std::uint64_t domain_seed, std::int64_t id) {
  Rng rng(mix_hash(domain_seed, 0x1d117100ULL + static_cast<std::uint64_t>(id)));
  IdentityLook look;
  look.torso = sample_body_color(rng, 0.34, 0.66, 0.04, 0.10);
  look.legs = sample_body_color(rng, 0.34, 0.66, 0.04, 0.10);
  look.head = sample_body_color(rng, 0.45, 0.68, 0.02, 0.06);
  look.torso_hw = rng.uniform(5.0, 9.0);
  look.head_rx = rng.uniform(2.5, 4.0);
  look.head_ry = rng.uniform(3.0, 5.0);
  look.head_cy = rng.uniform(10.0, 13.0);
  look.shoulder_y = rng.uniform(16.0, 18.0);
  look.hip_y = rng.uniform(36.0, 40.0);
  look.leg_bottom = rng.uniform(54.0, 58.0);
  look.leg_gap = rng.uniform(0.5, 1.5);
  look.leg_hw = look.torso_hw * rng.uniform(0.55, 0.80);
  return look;
}

void render_image(const DomainSpec& spec, std::int64_t id, std::int64_t cam, std::int64_t seq,
                  float* out /* [3*H*W] */) {
  const IdentityLook look = identity_look(spec.rng_seed, id);
  Rng jit(mix_hash(spec.rng_seed, 0xa11ce000ULL + static_cast<std::uint64_t>(id * 1009 + cam * 131 + seq)));
  const double cx = 16.0 + jit.uniform(-1.5, 1.5);
  const double s = jit.uniform(0.92, 1.08);
  const double dy = jit.uniform(-2.0, 2.0);
  const double shear =
      (static_cast<double>(cam) - static_cast<double>(spec.n_cameras - 1) / 2.0) * 0.08;

  const auto& palette = spec.style.background_palette;
  const std::array<double, 3> bg = palette[static_cast<std::size_t>(cam) % palette.size()];

  const double torso_hw = look.torso_hw * s;
  const double head_rx = look.head_rx * s;
  const double head_ry = look.head_ry * s;
  const double leg_hw = look.leg_hw * s;

  const std::int64_t hw = kImageH * kImageW;
  for (std::int64_t y = 0; y < kImageH; ++y) {
    const double yy = static_cast<double>(y) - dy;
    for (std::int64_t x = 0; x < kImageW; ++x) {
      const double xs = static_cast<double>(x) + shear * (static_cast<double>(y) - 32.0);
      const double dx = xs - cx;
      const std::array<double, 3>* color = nullptr;
      const double hx = dx / head_rx;
      const double hy = (yy - look.head_cy) / head_ry;
      if (hx * hx + hy * hy <= 1.0) {
        color = &look.head;
      } else if (yy >= look.shoulder_y && yy < look.hip_y && std::abs(dx) <= torso_hw) {
        color = &look.torso;
      } else if (yy >= look.hip_y && yy < look.leg_bottom && std::abs(dx) > look.leg_gap &&
                 std::abs(dx) <= look.leg_gap + leg_hw) {
        color = &look.legs;
      }
      double rgb[3];
      if (color != nullptr) {
        rgb[0] = (*color)[0];
        rgb[1] = (*color)[1];
        rgb[2] = (*color)[2];
      } else {
        const double grad = 1.0 - 0.18 * static_cast<double>(y) / static_cast<double>(kImageH);
        rgb[0] = bg[0] * grad;
        rgb[1] = bg[1] * grad;
        rgb[2] = bg[2] * grad;
      }
      for (int c = 0; c < 3; ++c) out[c * hw + y * kImageW + x] = static_cast<float>(rgb[c]);
    }
  }
}

void apply_style(const DomainStyle& style, std::uint64_t noise_seed, float* px /* [3*H*W] */) {
  const std::int64_t hw = kImageH * kImageW;
  if (style.hue_shift != 0.0) {
    const double th = style.hue_shift * kPi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const auto& f = cm().fwd;
    for (std::int64_t i = 0; i < hw; ++i) {
      const double r = px[i], g = px[hw + i], b = px[2 * hw + i];
      const double y = f[0][0] * r + f[0][1] * g + f[0][2] * b;
      const double ii = f[1][0] * r + f[1][1] * g + f[1][2] * b;
      const double q = f[2][0] * r + f[2][1] * g + f[2][2] * b;
      const double ir = ii * ct - q * st;
      const double qr = ii * st + q * ct;
      const auto rgb = yiq_to_rgb(y, ir, qr);
      px[i] = static_cast<float>(rgb[0]);
      px[hw + i] = static_cast<float>(rgb[1]);
      px[2 * hw + i] = static_cast<float>(rgb[2]);
    }
  }
  Rng noise(noise_seed);
  const bool noisy = style.noise_sigma > 0.0;
  for (std::int64_t i = 0; i < 3 * hw; ++i) {
    double v = px[i];
    v *= style.brightness;
    v = (v - 0.5) * style.contrast + 0.5;
    if (noisy) v += noise.normal(0.0, style.noise_sigma);
    px[i] = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
  }
}

ImageBatch make_batch(const std::string& domain, std::int64_t n) {
  ImageBatch b;
  b.pixels = Tensor<float>(Shape{n, 3, kImageH, kImageW});
  b.ids.resize(static_cast<std::size_t>(n));
  b.cams.resize(static_cast<std::size_t>(n));
  b.domain = domain;
  return b;
}

}  // namespace

void validate(const DomainSpec& spec) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("invalid DomainSpec field '" + field + "': " + why);
  };
  if (spec.domain_id.empty()) fail("domain_id", "must be non-empty");
  if (spec.style.hue_shift < -180.0 || spec.style.hue_shift > 180.0)
    fail("hue_shift", "must be in [-180, 180]");
  if (spec.style.brightness < 0.5 || spec.style.brightness > 1.5)
    fail("brightness", "must be in [0.5, 1.5]");
  if (spec.style.contrast < 0.5 || spec.style.contrast > 1.5)
    fail("contrast", "must be in [0.5, 1.5]");
  if (spec.style.noise_sigma < 0.0 || spec.style.noise_sigma > 0.1)
    fail("noise_sigma", "must be in [0, 0.1]");
  if (spec.style.background_palette.empty()) fail("background_palette", "must be non-empty");
  for (const auto& c : spec.style.background_palette)
    for (double v : c)
      if (v < 0.0 || v > 1.0) fail("background_palette", "entries must be RGB in [0,1]");
  if (spec.n_identities < 2) fail("n_identities", "must be >= 2");
  if (spec.n_cameras < 2) fail("n_cameras", "must be >= 2");
  if (spec.images_per_identity < spec.n_cameras)
    fail("images_per_identity", "must be >= n_cameras");
}

const SplitDataset& DomainData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "query") return query;
  if (name == "gallery") return gallery;
  throw std::invalid_argument("unknown split '" + name + "'");
}

DomainData generate_domain(const DomainSpec& spec) {
  validate(spec);
  const std::int64_t n = spec.n_identities;
  std::int64_t n_eval = static_cast<std::int64_t>(std::llround(static_cast<double>(n) / 3.0));
  n_eval = std::clamp<std::int64_t>(n_eval, 2, n);
  const std::int64_t n_train = n - n_eval;

  struct Item {
    std::int64_t id, cam, seq;
    int split;  // 0 train, 1 query, 2 gallery
  };
  std::vector<Item> items;
  for (std::int64_t id = 0; id < n; ++id)
    for (std::int64_t seq = 0; seq < spec.images_per_identity; ++seq) {
      const std::int64_t cam = seq % spec.n_cameras;
      const int split = id < n_train ? 0 : (cam == 0 ? 1 : 2);
      items.push_back({id, cam, seq, split});
    }

  std::int64_t counts[3] = {0, 0, 0};
  for (const auto& it : items) ++counts[it.split];

  DomainData out;
  out.domain_id = spec.domain_id;
  out.train = {"train", make_batch(spec.domain_id, counts[0])};
  out.query = {"query", make_batch(spec.domain_id, counts[1])};
  out.gallery = {"gallery", make_batch(spec.domain_id, counts[2])};

  SplitDataset* splits[3] = {&out.train, &out.query, &out.gallery};
  std::int64_t cursor[3] = {0, 0, 0};
  const std::int64_t img_elems = 3 * kImageH * kImageW;
  std::int64_t global_index = 0;
  for (const auto& it : items) {
    ImageBatch& b = splits[it.split]->data;
    const std::int64_t row = cursor[it.split]++;
    float* px = b.pixels.data() + row * img_elems;
    render_image(spec, it.id, it.cam, it.seq, px);
    apply_style(spec.style, mix_hash(spec.rng_seed, 0x9015e000ULL + static_cast<std::uint64_t>(global_index)), px);
    b.ids[static_cast<std::size_t>(row)] = it.id;
    b.cams[static_cast<std::size_t>(row)] = it.cam;
    ++global_index;
  }
  return out;
}

void write_dataset(const std::string& root_path, const DomainData& data) {
  const SplitDataset* splits[3] = {&data.train, &data.query, &data.gallery};
  for (const auto* sd : splits) {
    std::unordered_map<std::int64_t, std::int64_t> seq_counter;
    const std::int64_t img_elems = 3 * kImageH * kImageW;
    for (std::int64_t i = 0; i < sd->data.size(); ++i) {
      const std::int64_t id = sd->data.ids[static_cast<std::size_t>(i)];
      const std::int64_t cam = sd->data.cams[static_cast<std::size_t>(i)];
      const fs::path dir =
          fs::path(root_path) / data.domain_id / sd->split / std::to_string(id);
      fs::create_directories(dir);
      Tensor<float> chw(Shape{3, kImageH, kImageW});
      std::copy_n(sd->data.pixels.data() + i * img_elems, img_elems, chw.data());
      const std::int64_t seq = seq_counter[id]++;
      write_png((dir / (std::to_string(cam) + "_" + std::to_string(seq) + ".png")).string(),
                to_rgb8(chw));
    }
  }
}

namespace {

std::int64_t parse_decimal(const std::string& s, const std::string& what,
                           const std::string& context) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw std::runtime_error("bad " + what + " '" + s + "' in " + context);
  return std::stoll(s);
}

}  // namespace

DomainData load_dataset(const std::string& root_path, const std::string& domain_id) {
  const fs::path droot = fs::path(root_path) / domain_id;
  if (!fs::is_directory(droot))
    throw std::runtime_error("dataset root does not contain domain '" + domain_id + "' at " +
                             droot.string());
  DomainData out;
  out.domain_id = domain_id;
  for (const std::string split : {"train", "query", "gallery"}) {
    const fs::path sroot = droot / split;
    struct Rec {
      std::int64_t id, cam, seq;
      fs::path path;
    };
    std::vector<Rec> recs;
    if (fs::is_directory(sroot)) {
      std::vector<fs::path> id_dirs;
      for (const auto& e : fs::directory_iterator(sroot)) id_dirs.push_back(e.path());
      std::sort(id_dirs.begin(), id_dirs.end());
      for (const auto& idp : id_dirs) {
        if (!fs::is_directory(idp))
          throw std::runtime_error("unexpected non-directory entry " + idp.string());
        const std::int64_t id = parse_decimal(idp.filename().string(), "identity_id", sroot.string());
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(idp)) files.push_back(f.path());
        if (files.empty())
          throw std::runtime_error("identity directory '" + idp.string() + "' has no images");
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          const std::string stem = f.stem().string();
          const auto us = stem.find('_');
          if (f.extension() != ".png" || us == std::string::npos)
            throw std::runtime_error("bad image filename '" + f.filename().string() +
                                     "' (expected <camera>_<seq>.png) in " + idp.string());
          const std::int64_t cam = parse_decimal(stem.substr(0, us), "camera_id", f.string());
          const std::int64_t seq = parse_decimal(stem.substr(us + 1), "sequence number", f.string());
          recs.push_back({id, cam, seq, f});
        }
      }
    }
    if (recs.empty()) throw std::runtime_error("split '" + split + "' has no identities");

    ImageBatch batch = make_batch(domain_id, static_cast<std::int64_t>(recs.size()));
    const std::int64_t img_elems = 3 * kImageH * kImageW;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      Tensor<float> chw = resize_bilinear(to_float(read_png(recs[i].path.string())), kImageH, kImageW);
      std::copy_n(chw.data(), img_elems, batch.pixels.data() + static_cast<std::int64_t>(i) * img_elems);
      batch.ids[i] = recs[i].id;
      batch.cams[i] = recs[i].cam;
    }
    SplitDataset sd{split, std::move(batch)};
    if (split == "train")
      out.train = std::move(sd);
    else if (split == "query")
      out.query = std::move(sd);
    else
      out.gallery = std::move(sd);
  }
  return out;
}

ImageBatch take(const ImageBatch& b, const std::vector<std::int64_t>& indices) {
  ImageBatch out = make_batch(b.domain, static_cast<std::int64_t>(indices.size()));
  const std::int64_t img_elems = b.pixels.numel() / std::max<std::int64_t>(b.size(), 1);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::int64_t src = indices[i];
    if (src < 0 || src >= b.size()) throw std::out_of_range("take: index out of range");
    std::copy_n(b.pixels.data() + src * img_elems, img_elems,
                out.pixels.data() + static_cast<std::int64_t>(i) * img_elems);
    out.ids[i] = b.ids[static_cast<std::size_t>(src)];
    out.cams[i] = b.cams[static_cast<std::size_t>(src)];
  }
  return out;
}

ImageBatch sample_batch(const SplitDataset& dataset, std::int64_t batch_size, Rng& rng) {
  const std::int64_t n = dataset.data.size();
  if (batch_size > n)
    throw std::invalid_argument("sample_batch: batch_size " + std::to_string(batch_size) +
                                " exceeds dataset size " + std::to_string(n));
  return take(dataset.data, rng.sample_without_replacement(n, batch_size));
}

DomainSpec stock_domain(const std::string& domain_id) {
  struct Preset {
    const char* id;
    double hue, brightness, contrast, noise;
    std::uint64_t seed;
  };
  static const Preset presets[] = {
      {"D1", 0.0, 1.00, 1.00, 0.025, 9101},
      {"D2", 90.0, 0.88, 1.10, 0.035, 9202},
      {"D3", -90.0, 1.12, 0.92, 0.020, 9303},
      {"D4", 45.0, 1.05, 1.15, 0.030, 9404},
      {"D5", -125.0, 0.78, 0.85, 0.040, 9505},
  };
  int index = 0;
  for (const auto& p : presets) {
    if (domain_id == p.id) {
      DomainSpec spec;
      spec.domain_id = p.id;
      spec.style.hue_shift = p.hue;
      spec.style.brightness = p.brightness;
      spec.style.contrast = p.contrast;
      spec.style.noise_sigma = p.noise;
      for (int k = 0; k < 4; ++k) {
        const double y = 0.78 + 0.04 * ((k + index) % 3);
        const double c = 0.06;
        const double a = 2.399963 * (k + 1 + index);  // golden-angle spacing
        spec.style.background_palette.push_back(yiq_to_rgb(y, c * std::cos(a), c * std::sin(a)));
      }
      spec.n_identities = 64;
      spec.images_per_identity = 8;
      spec.n_cameras = 4;
      spec.rng_seed = p.seed;
      return spec;
    }
    ++index;
  }
  throw std::invalid_argument("unknown stock domain '" + domain_id + "' (expected D1..D5)");
}

std::vector<std::string> stock_domain_ids() { return {"D1", "D2", "D3", "D4", "D5"}; }

std::vector<double> luminance(const Tensor<float>& t, std::int64_t image_index) {
  const float* base = t.data();
  std::int64_t hw = 0;
  if (t.ndim() == 3) {
    hw = t.dim(1) * t.dim(2);
  } else if (t.ndim() == 4) {
    hw = t.dim(2) * t.dim(3);
    base += image_index * 3 * hw;
  } else {
    throw std::invalid_argument("luminance expects [3,H,W] or [B,3,H,W]");
  }
  std::vector<double> out(static_cast<std::size_t>(hw));
  const auto& f = cm().fwd;
  for (std::int64_t i = 0; i < hw; ++i)
    out[static_cast<std::size_t>(i)] =
        f[0][0] * base[i] + f[0][1] * base[hw + i] + f[0][2] * base[2 * hw + i];
  return out;
}

}  // namespace mtga::synthzoo
