#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "avg/config.hpp"

using namespace avg;
using namespace avg::cfg;

namespace {

std::string tmp(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("defaults and typed getters") {
  Config c = default_config();
  CHECK(c.get_num("trainer.lambda_av") == doctest::Approx(0.01));
  CHECK(c.get_num("trainer.lambda_ctc") == doctest::Approx(0.1));
  CHECK(c.get_num("trainer.lambda_ce") == doctest::Approx(0.9));
  CHECK(c.get_num("trainer.lr") == doctest::Approx(1e-4));
  CHECK(c.get_int("animator.model_dim") == 128);
  CHECK(c.get_int("trainer.epochs") == 100);
  CHECK(c.get_bool("trainer.no_prior") == false);
  CHECK(c.get_str("audio.speech_encoder") == "logmel");
  CHECK(c.get_int("render.crop_size") == 88);
}

TEST_CASE("file parsing with sections, dotted keys and comments") {
  auto p = tmp("avg_cfg.cfg");
  {
    std::ofstream out(p);
    out << "# comment line\n"
        << "trainer.epochs = 7   ; trailing comment\n"
        << "\n"
        << "[animator]\n"
        << "model_dim = 64\n"
        << "heads=2\n"
        << "[trainer]\n"
        << "lambda_av = 0.5\n";
  }
  Config c = default_config();
  c.load_file(p);
  CHECK(c.get_int("trainer.epochs") == 7);
  CHECK(c.get_int("animator.model_dim") == 64);
  CHECK(c.get_int("animator.heads") == 2);
  CHECK(c.get_num("trainer.lambda_av") == doctest::Approx(0.5));
  std::remove(p.c_str());
}

TEST_CASE("unknown keys are rejected with location") {
  auto p = tmp("avg_cfg_bad.cfg");
  {
    std::ofstream out(p);
    out << "trainer.epochs = 7\n"
        << "trainer.bogus = 1\n";
  }
  Config c = default_config();
  CHECK_THROWS_WITH_AS(c.load_file(p), doctest::Contains(":2:"), ConfigError);
  std::remove(p.c_str());

  Config c2 = default_config();
  CHECK_THROWS_AS(c2.apply_override("nonsense.key=3"), ConfigError);
  CHECK_THROWS_AS(c2.apply_override("no equals sign"), ConfigError);
  CHECK_NOTHROW(c2.apply_override("trainer.epochs=3"));
  CHECK(c2.get_int("trainer.epochs") == 3);
}

TEST_CASE("malformed values raise config errors") {
  Config c = default_config();
  c.set("trainer.epochs", "abc");
  CHECK_THROWS_AS(c.get_int("trainer.epochs"), ConfigError);
  c.set("trainer.lambda_av", "zz");
  CHECK_THROWS_AS(c.get_num("trainer.lambda_av"), ConfigError);
  c.set("trainer.no_prior", "maybe");
  CHECK_THROWS_AS(c.get_bool("trainer.no_prior"), ConfigError);
  c.set("trainer.no_prior", "YES");
  CHECK(c.get_bool("trainer.no_prior"));
}

TEST_CASE("canonical form and hash are stable and value sensitive") {
  Config a = default_config();
  Config b = default_config();
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  b.set("trainer.epochs", "99");
  CHECK(a.hash() != b.hash());

  auto p = tmp("avg_cfg_echo.cfg");
  a.echo_to(p);
  Config c = default_config();
  c.load_file(p);  // the echo must parse and reproduce the same hash
  CHECK(c.hash() == a.hash());
  std::remove(p.c_str());
}

TEST_CASE("profiles") {
  Config c = default_config();
  apply_profile(c, "smoke");
  CHECK(c.get_int("trainer.epochs") < 100);
  CHECK(c.get_int("render.crop_size") < 88);
  Config d = default_config();
  apply_profile(d, "desk");
  CHECK(d.get_int("trainer.epochs") == 100);
  CHECK_THROWS_AS(apply_profile(d, "turbo"), ConfigError);
}

TEST_CASE("parse errors carry line numbers") {
  auto p = tmp("avg_cfg_parse.cfg");
  {
    std::ofstream out(p);
    out << "[unterminated\n";
  }
  Config c = default_config();
  CHECK_THROWS_AS(c.load_file(p), ParseError);
  {
    std::ofstream out(p);
    out << "novalue\n";
  }
  CHECK_THROWS_AS(c.load_file(p), ParseError);
  std::remove(p.c_str());
}
