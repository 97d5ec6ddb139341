#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mtga/checkpoint.hpp"
#include "mtga/run_config.hpp"

using namespace mtga;
namespace fs = std::filesystem;

namespace {
fs::path tmp_dir() {
  const fs::path p = fs::temp_directory_path() / "mtga_ckpt_test";
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("container round trip preserves arrays, order, and metadata") {
  ckpt::Container c;
  c.kind = "generator";
  c.meta["epsilon"] = "0.031373";
  Rng rng(3);
  for (int i = 0; i < 4; ++i) {
    Tensor<float> t = Tensor<float>::uninit({3, i + 1});
    for (std::int64_t j = 0; j < t.numel(); ++j) t[j] = static_cast<float>(rng.uniform(-1, 1));
    c.arrays.emplace_back("arr" + std::to_string(i), std::move(t));
  }
  const std::string path = (tmp_dir() / "container.ckpt").string();
  ckpt::save_container(path, c);
  ckpt::Container r = ckpt::load_container(path);
  CHECK(r.kind == c.kind);
  CHECK(r.meta.at("epsilon") == "0.031373");
  REQUIRE(r.arrays.size() == c.arrays.size());
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    CHECK(r.arrays[i].first == c.arrays[i].first);
    REQUIRE(r.arrays[i].second.shape() == c.arrays[i].second.shape());
    for (std::int64_t j = 0; j < c.arrays[i].second.numel(); ++j)
      REQUIRE(r.arrays[i].second[j] == c.arrays[i].second[j]);
  }
}

TEST_CASE("model and generator checkpoints restore bit-identical behavior") {
  auto net = reid::EmbedNet<float>::build("p1", 5);
  net.train_domain = "D2";
  Rng rng(6);
  for (auto& buf : net.bn_buffers)
    for (std::int64_t c = 0; c < buf.running_mean.numel(); ++c) {
      buf.running_mean[c] = static_cast<float>(rng.uniform(-1, 1));
      buf.running_var[c] = static_cast<float>(rng.uniform(0.1, 2));
    }
  const std::string mpath = (tmp_dir() / "model.ckpt").string();
  ckpt::save_model(mpath, net);
  auto restored = ckpt::load_model(mpath);
  CHECK(restored.variant_id == "p1");
  CHECK(restored.train_domain == "D2");

  Tensor<float> batch(Shape{2, 3, synthzoo::kImageH, synthzoo::kImageW});
  for (std::int64_t i = 0; i < batch.numel(); ++i)
    batch[i] = static_cast<float>(rng.uniform(0, 1));
  Tensor<float> e1 = reid::forward_embed_running(net, batch);
  Tensor<float> e2 = reid::forward_embed_running(restored, batch);
  for (std::int64_t i = 0; i < e1.numel(); ++i) REQUIRE(e1[i] == e2[i]);

  auto gen = attacker::GeneratorNet<float>::build(0.02, 7);
  const std::string gpath = (tmp_dir() / "gen.ckpt").string();
  ckpt::save_generator(gpath, gen);
  auto rgen = ckpt::load_generator(gpath);
  CHECK(rgen.epsilon == doctest::Approx(0.02).epsilon(1e-9));
  {
    NoGradGuard ng;
    Tensor<float> d1 = gen.perturbation(nn::make_constants(gen.params), Var<float>::constant(batch)).val();
    Tensor<float> d2 = rgen.perturbation(nn::make_constants(rgen.params), Var<float>::constant(batch)).val();
    for (std::int64_t i = 0; i < d1.numel(); ++i) REQUIRE(d1[i] == d2[i]);
  }

  auto dis = attacker::DiscriminatorNet<float>::build(8);
  const std::string dpath = (tmp_dir() / "dis.ckpt").string();
  ckpt::save_discriminator(dpath, dis);
  auto rdis = ckpt::load_discriminator(dpath);
  for (std::size_t i = 0; i < dis.params.size(); ++i)
    for (std::int64_t j = 0; j < dis.params.values[i].numel(); ++j)
      REQUIRE(dis.params.values[i][j] == rdis.params.values[i][j]);

  SUBCASE("kind mismatch and missing files are errors") {
    CHECK_THROWS_AS(ckpt::load_model(gpath), std::runtime_error);
    CHECK_THROWS_AS(ckpt::load_generator((tmp_dir() / "nope.ckpt").string()), std::runtime_error);
  }
  SUBCASE("corrupted magic is rejected") {
    const std::string bad = (tmp_dir() / "bad.ckpt").string();
    std::ofstream(bad) << "definitely not a checkpoint";
    CHECK_THROWS_WITH_AS(ckpt::load_container(bad), doctest::Contains("not a checkpoint"),
                         std::runtime_error);
  }
}

TEST_CASE("empty config resolves to the published defaults") {
  cli::RunConfig cfg = cli::config_from_json(nlohmann::json::object());
  CHECK(cfg.meta.epsilon == doctest::Approx(8.0 / 255.0).epsilon(1e-12));
  CHECK(cfg.meta.pre_p == 0.8);
  CHECK(cfg.meta.pre_m == 0.2);
  CHECK(cfg.meta.beta_a == 5.0);
  CHECK(cfg.meta.beta_b == 5.0);
  CHECK(cfg.meta.inner_lr == 1e-4);
  CHECK(cfg.meta.outer_lr == 2e-4);
  CHECK(cfg.meta.tasks_per_iter == 5);
  CHECK(cfg.meta.iterations == 2000);
  CHECK(cfg.meta.batch_size == 16);
  CHECK(cfg.domains.size() == 5);
  CHECK(cfg.data_zoo == std::vector<std::string>{"D1", "D2", "D3"});
  CHECK(cfg.model_zoo.size() == 3);
  CHECK(cfg.targets.size() == 9);
  CHECK(cfg.settings.size() == 6);
  CHECK(cfg.resolved_mode() == cli::AttackMode::meta);
}

TEST_CASE("unknown keys are rejected by name") {
  CHECK_THROWS_WITH_AS(cli::config_from_json({{"epsilonn", 1}}), doctest::Contains("epsilonn"),
                       cli::ConfigError);
  CHECK_THROWS_WITH_AS(cli::config_from_json({{"meta", {{"learningrate", 1}}}}),
                       doctest::Contains("learningrate"), cli::ConfigError);
  CHECK_THROWS_WITH_AS(cli::config_from_json({{"flags", {{"pre", true}}}}),
                       doctest::Contains("pre"), cli::ConfigError);
}

TEST_CASE("config validation catches bad references") {
  CHECK_THROWS_WITH_AS(cli::config_from_json({{"data_zoo", {"D1", "D9"}}}),
                       doctest::Contains("D9"), cli::ConfigError);
  CHECK_THROWS_WITH_AS(cli::config_from_json({{"settings", {"cross-everything"}}}),
                       doctest::Contains("cross-everything"), std::exception);
  CHECK_THROWS_AS(cli::config_from_json({{"meta", {{"iterations", 0}}}}), cli::ConfigError);
  CHECK_THROWS_WITH_AS(
      cli::config_from_json({{"model_zoo", nlohmann::json::array({{{"variant", "zz"}, {"train_domain", "D1"}}})}}),
      doctest::Contains("zz"), std::exception);
}

TEST_CASE("resolved config round-trips byte-identically") {
  cli::RunConfig cfg = cli::default_config();
  cfg.seed = 777;
  cfg.flags.second_order = true;
  cfg.meta.iterations = 123;
  const fs::path path = tmp_dir() / "config.json";
  cli::save_config(path.string(), cfg);
  cli::RunConfig re = cli::load_config(path.string());
  CHECK(cli::to_json(re) == cli::to_json(cfg));
  // byte-identical second serialization
  const fs::path path2 = tmp_dir() / "config2.json";
  cli::save_config(path2.string(), re);
  std::ifstream a(path), b(path2);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("parse errors carry line numbers") {
  const fs::path path = tmp_dir() / "broken.json";
  std::ofstream(path) << "{\n  \"seed\": 1,\n  \"output_dir\": oops\n}\n";
  CHECK_THROWS_WITH_AS(cli::load_config(path.string()), doctest::Contains("line 3"),
                       cli::ConfigError);
  CHECK_THROWS_WITH_AS(cli::load_config((tmp_dir() / "missing.json").string()),
                       doctest::Contains("cannot open"), cli::ConfigError);
}

TEST_CASE("cas flag controls the resolved attack mode") {
  cli::RunConfig cfg = cli::config_from_json({{"flags", {{"cas_enabled", false}}}});
  CHECK(cfg.resolved_mode() == cli::AttackMode::baseline);
  cfg = cli::config_from_json({{"flags", {{"cas_enabled", false}}}, {"attack_mode", "ensemble"}});
  CHECK(cfg.resolved_mode() == cli::AttackMode::ensemble);
  CHECK_THROWS_AS(cli::config_from_json({{"attack_mode", "turbo"}}), cli::ConfigError);
}
