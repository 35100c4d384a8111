#include <string>

#include "doctest.h"
#include "sara/config.hpp"

using namespace sara;

namespace {

std::string error_of(const std::string& text) {
    try {
        config_from_text(text, "run.ini");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("parsing sections, comments and quoted values") {
    const Config c = config_from_text(
        "# top comment\n"
        "[run]\n"
        "seed = 0x10   ; trailing comment\n"
        "steps=25\n"
        "output_root = \"out dir # kept\"\n"
        "\n"
        "[dataset]\n"
        "mode = gaussian-mixture\n"
        "mean_scale = 2.5\n"
        "[diagnostics]\n"
        "ref_patches = 0, 3,7\n"
        "raw_hidden = yes\n");
    CHECK(c.train.seed == 16);
    CHECK(c.train.steps == 25);
    CHECK(c.output_root == "out dir # kept");
    CHECK(c.train.dataset.mode == DatasetMode::gaussian_mixture);
    CHECK(c.train.dataset.mean_scale == 2.5);
    CHECK(c.report.ref_patches == std::vector<std::size_t>{0, 3, 7});
    CHECK(c.report.raw_hidden);
    CHECK(c.present.count("run.steps") == 1);
    CHECK(c.present.count("run.batch_size") == 0);
}

TEST_CASE("errors carry file and line") {
    CHECK(error_of("[run]\nsteps = 5\nsteps = 6\n").rfind("run.ini:3:", 0) == 0);
    CHECK(error_of("[run]\nbogus = 1\n").rfind("run.ini:2:", 0) == 0);
    CHECK(error_of("[run]\nbogus = 1\n").find("run.bogus") != std::string::npos);
    CHECK(error_of("steps = 1\n").rfind("run.ini:1:", 0) == 0);
    CHECK(error_of("[run]\n\n\nsteps = -4\n").rfind("run.ini:4:", 0) == 0);
    CHECK(error_of("[run\n").rfind("run.ini:1:", 0) == 0);
    CHECK(error_of("[run]\nsteps 4\n").rfind("run.ini:2:", 0) == 0);
    CHECK(error_of("[alignment]\nlambda = fast\n").find("alignment.lambda") != std::string::npos);
    CHECK(error_of("[run]\ndtype = f16\n").find("f32 or f64") != std::string::npos);
}

TEST_CASE("overrides apply after the file, in order") {
    Config c = config_from_text("[run]\nsteps = 10\n[alignment]\nbeta = 0.25\n");
    apply_overrides(c, {"run.steps=40", "alignment.beta = 0", "run.steps=41"});
    CHECK(c.train.steps == 41);
    CHECK(c.train.alignment.beta == 0);
    CHECK_THROWS_AS(apply_overrides(c, {"run.steps"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(c, {"nope.key=1"}), ConfigError);
}

TEST_CASE("rendered text parses back to the same values") {
    Config c;
    c.train.seed = 77;
    c.train.alignment.gamma = 0.1 + 0.2;
    c.train.dtype = DType::f64;
    c.output_root = "a b";
    c.report.ref_patches = {1, 2};
    const Config back = config_from_text(to_config_text(c));
    CHECK(to_key_values(back) == to_key_values(c));
    CHECK(back.train.alignment.gamma == 0.1 + 0.2);

    const auto kv = to_key_values(c, true);
    CHECK(kv.count("sampler.nfe") == 0);
    CHECK(kv.count("run.output_root") == 0);
    const TrainConfig tc = train_config_from(kv);
    CHECK(tc.seed == 77);
    CHECK(tc.dtype == DType::f64);
    CHECK(known_keys().size() == to_key_values(c).size());
}
