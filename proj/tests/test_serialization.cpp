#include <cstring>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mos/errors.hpp"
#include "mos/serialization.hpp"
#include "mos/synth.hpp"
#include "test_support.hpp"

using namespace mos;

namespace {

bool bit_equal(const Vector &a, const Vector &b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

ModelParams trained_looking(std::uint64_t seed) {
    MosConfig c;
    c.experts = 4;
    c.seed = seed;
    ModelParams p = init_params(c);
    // Perturb with awkward values so that formatting matters.
    std::mt19937_64 rng(seed);
    Vector flat = flatten(p);
    for (auto &v : flat) v += testing::random_vector(1, rng, 1e-3)[0] / 3.0;
    flat[0] = 1e-310;
    flat[1] = -0.0;
    flat[2] = 123456789.123456789;
    unflatten(flat, p);
    return p;
}

} // namespace

TEST_CASE("JSON checkpoint round trip is value exact") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ModelParams p = trained_looking(seed);
        const std::string text = checkpoint_to_json(p);
        const ModelParams q = checkpoint_from_json(text);
        CHECK(q.config == p.config);
        CHECK(flatten(q) == flatten(p));
        CHECK(checkpoint_to_json(q) == text);
        CHECK(checkpoint_from_bytes(text) == p);
    }
}

TEST_CASE("binary checkpoint round trip is bit exact") {
    const ModelParams p = trained_looking(4);
    const std::string bytes = checkpoint_to_binary(p);
    const ModelParams q = checkpoint_from_binary(bytes);
    CHECK(bit_equal(flatten(q), flatten(p)));
    CHECK(q.config == p.config);
    CHECK(checkpoint_from_bytes(bytes) == p);
    CHECK(q.router.transform.norm.epsilon == p.router.transform.norm.epsilon);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const ModelParams p = trained_looking(5);
    const std::string bytes = checkpoint_to_binary(p);
    CHECK_THROWS_AS(checkpoint_from_binary(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(checkpoint_from_binary(bytes + "x"), FormatError);
    CHECK_THROWS_AS(checkpoint_from_json("{\"format\": \"other\"}"), FormatError);
    CHECK_THROWS_AS(checkpoint_from_json("not json"), FormatError);
    auto j = Json::parse(checkpoint_to_json(p));
    j["tensors"].erase("router.weights");
    CHECK_THROWS_AS(checkpoint_from_json(j.dump()), FormatError);
}

TEST_CASE("dataset CSV round trip") {
    GeneratorConfig g;
    g.seed = 6;
    const Generator gen(g);
    const Dataset d = gen.sample({"ood_test", 250, {}, {}});
    const DatasetHeader h{"ood_test", 6, g};
    const std::string csv = dataset_to_csv(d, h);
    const auto loaded = dataset_from_csv(csv, &g);
    CHECK(loaded.data == d);
    CHECK(loaded.header.split == "ood_test");
    CHECK(loaded.header.seed == 6);
    CHECK(loaded.header.generator == g);
    CHECK(dataset_to_csv(loaded.data, loaded.header) == csv);

    // Column layout: y, a_1..a_G, x_1..x_D with 17 significant digits.
    std::istringstream in(csv);
    std::string header, names, row;
    std::getline(in, header);
    std::getline(in, names);
    std::getline(in, row);
    CHECK(header.rfind("# ", 0) == 0);
    CHECK(names.rfind("y,a_1,a_2,a_3,x_1,", 0) == 0);
    std::size_t fields = 1;
    for (char c : row) fields += c == ',';
    CHECK(fields == 1 + 3 + g.feature_dim());
    CHECK(row.substr(row.rfind(',') + 1) == format_double(d.features(0, g.feature_dim() - 1)));
}

TEST_CASE("dataset loader validates against the config") {
    GeneratorConfig g;
    g.seed = 7;
    const Generator gen(g);
    const std::string csv = dataset_to_csv(gen.sample({"train", 20, {}, {}}), {"train", 7, g});
    GeneratorConfig other = g;
    other.shortcut_noise = 0.1;
    CHECK_THROWS_AS(dataset_from_csv(csv, &other), FormatError);
    CHECK_NOTHROW(dataset_from_csv(csv, nullptr));
    CHECK_THROWS_AS(dataset_from_csv("y,x\n1,2\n"), FormatError);

    const auto last_line = csv.rfind('\n', csv.size() - 2);
    CHECK_THROWS_AS(dataset_from_csv(csv.substr(0, last_line + 1)), FormatError);
    std::string bad = csv;
    bad.insert(last_line + 1, "9,");
    CHECK_THROWS_AS(dataset_from_csv(bad), FormatError);
}

TEST_CASE("format_double round trips") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 1000; ++i) {
        const double v = testing::random_vector(1, rng, 1e3)[0];
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.10000000000000001");
}
