#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "actnet/cell_features.h"
#include "actnet/dataset.h"
#include "actnet/graph.h"

using namespace actnet;
using namespace actnet::data;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("actnet_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return out;
}

GeneratorConfig small_generator(std::size_t classes = 3, std::size_t n = 10) {
    GeneratorConfig g;
    g.classes = classes;
    g.train_per_class = n;
    g.test_per_class = 2;
    g.image_size = 32;
    return g;
}

RunConfig small_run_config() {
    return parse_run_config(R"({"generator": {"classes": 3, "train_per_class": 10, "test_per_class": 2, "image_size": 32}})");
}

bool has_problem(const DatasetError& e, const std::string& needle) {
    return std::any_of(e.problems().begin(), e.problems().end(),
                       [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

}  // namespace

TEST(Generator, CountsAndLayout) {
    const fs::path root = fresh_dir("gen_counts");
    GeneratorConfig g = small_generator(3, 10);
    g.test_per_class = 0;
    const auto m = generate_synthetic(g, 1, root);
    EXPECT_EQ(m.samples.size(), 30u);
    EXPECT_EQ(m.num_classes(), 3u);
    for (const auto& s : m.samples) {
        EXPECT_TRUE(fs::is_regular_file(root / s.image));
        EXPECT_TRUE(fs::is_regular_file(root / s.mask));
    }
    EXPECT_EQ(m.class_counts()[0], (std::vector<std::size_t>{10, 10, 10}));
    EXPECT_TRUE(fs::is_regular_file(root / "manifest.json"));
}

TEST(Generator, SameSeedIsByteIdentical) {
    const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b"), c = fresh_dir("gen_c");
    generate_synthetic(small_generator(), 7, a);
    generate_synthetic(small_generator(), 7, b);
    generate_synthetic(small_generator(), 8, c);
    EXPECT_EQ(tree_bytes(a), tree_bytes(b));
    EXPECT_NE(tree_bytes(a), tree_bytes(c));
}

TEST(Generator, MasksHaveContiguousLabelsAndMatchTheImage) {
    const auto profiles = class_profiles(3);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::uint64_t s = 0; s < 10; ++s) {
            std::mt19937_64 rng(s);
            const Patch p = render_patch(profiles[c], 64, rng);
            ASSERT_EQ(p.image.width, 64u);
            ASSERT_EQ(p.image.channels, 3u);
            const auto cells = features::collect_instances(p.mask);
            ASSERT_GE(cells.size(), 1u);
            EXPECT_EQ(cells.size(), static_cast<std::size_t>(p.mask.max_label()));
            // Each instance is one connected component with at least a few pixels.
            EXPECT_EQ(features::label_components(p.mask).max_label(), p.mask.max_label());
            for (const auto& cell : cells) EXPECT_GE(cell.pixels.size(), 6u);
            for (double v : p.image.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        }
    }
}

TEST(Generator, CellCountsDifferAcrossClassesAsConfigured) {
    const auto profiles = class_profiles(3);
    std::vector<double> mean_cells(3, 0.0);
    constexpr int kPatches = 40;
    for (std::size_t c = 0; c < 3; ++c) {
        for (int s = 0; s < kPatches; ++s) {
            std::mt19937_64 rng(1000 + s);
            mean_cells[c] += render_patch(profiles[c], 64, rng).mask.max_label();
        }
        mean_cells[c] /= kPatches;
    }
    // The ordering of the configured densities survives placement rejections.
    std::vector<std::size_t> by_config{0, 1, 2}, by_measure{0, 1, 2};
    std::sort(by_config.begin(), by_config.end(), [&](auto a, auto b) { return profiles[a].cells_mean < profiles[b].cells_mean; });
    std::sort(by_measure.begin(), by_measure.end(), [&](auto a, auto b) { return mean_cells[a] < mean_cells[b]; });
    EXPECT_EQ(by_config, by_measure);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(mean_cells[c], profiles[c].cells_mean, 0.25 * profiles[c].cells_mean);
}

TEST(Generator, ManifestEchoesParameters) {
    const fs::path root = fresh_dir("gen_echo");
    const auto m = generate_synthetic(small_generator(4, 2), 3, root);
    ASSERT_EQ(m.generator["profiles"].size(), 4u);
    EXPECT_EQ(m.generator["image_size"], 32);
    EXPECT_EQ(m.generator["profiles"][1]["cells_mean"], class_profiles(4)[1].cells_mean);
    EXPECT_EQ(m.seed, 3u);
}

TEST(Generator, RejectsInvalidSizes) {
    GeneratorConfig g = small_generator();
    g.image_size = 8;
    EXPECT_THROW(generate_synthetic(g, 0, fresh_dir("gen_bad")), std::invalid_argument);
    g = small_generator(1);
    EXPECT_THROW(generate_synthetic(g, 0, fresh_dir("gen_bad")), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Manifest, RoundTripsBitExactly) {
    const fs::path root = fresh_dir("man_rt");
    const auto m = generate_synthetic(small_generator(), 2, root);
    const std::string text = serialize_manifest(m);
    const auto back = deserialize_manifest(text);
    EXPECT_EQ(back.samples, m.samples);
    EXPECT_EQ(back.class_names, m.class_names);
    EXPECT_EQ(back.generator, m.generator);
    EXPECT_EQ(serialize_manifest(back), text);
    EXPECT_EQ(slurp(root / "manifest.json"), text);
}

TEST(Manifest, StructuralErrorsAreEnumerated) {
    DatasetManifest m;
    m.class_names = {"a", "b"};
    m.samples = {{"x", "i.ppm", "m.pgm", "", 0, Split::train}, {"y", "j.ppm", "n.pgm", "", 1, Split::test}};
    auto j = to_json(m);
    j["samples"][0]["label"] = 5;
    j["samples"][1]["split"] = "holdout";
    j.erase("counts");
    try {
        manifest_from_json(j);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.problems().size(), 2u);
        EXPECT_TRUE(has_problem(e, "/samples/0/label"));
        EXPECT_TRUE(has_problem(e, "/samples/1/split"));
    }
    j = to_json(m);
    j["samples"][1]["id"] = "x";
    EXPECT_THROW(manifest_from_json(j), DatasetError);
    j = to_json(m);
    j["counts"]["train"] = {2, 0};
    EXPECT_THROW(manifest_from_json(j), DatasetError);
    j = to_json(m);
    j["extra"] = 1;
    EXPECT_THROW(manifest_from_json(j), DatasetError);
    EXPECT_THROW(deserialize_manifest("{"), DatasetError);
}

TEST(Ingest, GeneratedDatasetRoundTrips) {
    const fs::path root = fresh_dir("ing_rt");
    const auto m = generate_synthetic(small_generator(), 4, root);
    const auto back = ingest_dataset(root);
    EXPECT_EQ(back.samples, m.samples);
}

TEST(Ingest, MissingMaskIsNamed) {
    const fs::path root = fresh_dir("ing_missing");
    const auto m = generate_synthetic(small_generator(), 4, root);
    fs::remove(root / m.samples[3].mask);
    fs::remove(root / m.samples[5].mask);
    try {
        ingest_dataset(root);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.problems().size(), 2u);
        EXPECT_TRUE(has_problem(e, m.samples[3].mask));
        EXPECT_TRUE(has_problem(e, m.samples[5].mask));
    }
}

TEST(Ingest, CorruptImageIsNamed) {
    const fs::path root = fresh_dir("ing_corrupt");
    const auto m = generate_synthetic(small_generator(), 4, root);
    std::ofstream(root / m.samples[0].image, std::ios::binary) << "P6\n32 32\n255\nxx";
    try {
        ingest_dataset(root);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_TRUE(has_problem(e, m.samples[0].image));
    }
}

TEST(Ingest, LabelOutOfRangeIsRejected) {
    const fs::path root = fresh_dir("ing_label");
    auto m = generate_synthetic(small_generator(), 4, root);
    auto j = to_json(m);
    j["samples"][0]["label"] = 3;
    j.erase("counts");
    std::ofstream(root / "manifest.json") << j.dump();
    try {
        ingest_dataset(root);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_TRUE(has_problem(e, "label 3 outside [0, 3)"));
    }
}

TEST(Ingest, ConventionalLayout) {
    const fs::path src = fresh_dir("ing_src");
    const auto m = generate_synthetic(small_generator(2, 3), 5, src);
    const fs::path root = fresh_dir("ing_layout");
    for (const auto& s : m.samples) {
        const fs::path dir = root / to_string(s.split) / m.class_names[static_cast<std::size_t>(s.label)];
        fs::create_directories(dir);
        fs::copy_file(src / s.image, dir / (s.id + ".ppm"));
        fs::copy_file(src / s.mask, dir / (s.id + ".mask.pgm"));
    }
    const auto got = ingest_dataset(root);
    // Class directories are labelled in sorted order.
    auto names = m.class_names;
    std::sort(names.begin(), names.end());
    EXPECT_EQ(got.class_names, names);
    EXPECT_EQ(got.samples.size(), m.samples.size());
    EXPECT_EQ(got.split(Split::test).size(), m.split(Split::test).size());
    for (const auto& s : got.samples) EXPECT_EQ(got.class_names[static_cast<std::size_t>(s.label)], fs::path(s.image).parent_path().filename().string());

    fs::remove(root / "train" / m.class_names[1] / (m.samples[m.samples.size() - 3].id + ".mask.pgm"));
    try {
        ingest_dataset(root);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_TRUE(has_problem(e, m.samples[m.samples.size() - 3].id + ".mask.pgm"));
    }
}

// ---------------------------------------------------------------------------

TEST(GraphDataset, BuildsOneGraphPerSample) {
    const fs::path root = fresh_dir("gd_all");
    const auto m = generate_synthetic(small_generator(), 6, root);
    const auto report = build_graph_dataset(m, root, small_run_config(), 2);
    EXPECT_TRUE(report.failures.empty());
    ASSERT_EQ(report.manifest.samples.size(), m.samples.size());
    for (const auto& s : report.manifest.samples) {
        ASSERT_FALSE(s.graph.empty());
        const auto g = graph::deserialize_graph(slurp(root / s.graph));
        EXPECT_EQ(g.label, s.label);
        EXPECT_EQ(g.source_id, s.id);
        EXPECT_GT(g.n, 0u);
    }
    EXPECT_EQ(load_manifest(root).samples, report.manifest.samples);
}

TEST(GraphDataset, EmptyMaskIsReportedAndExcluded) {
    const fs::path root = fresh_dir("gd_empty");
    const auto m = generate_synthetic(small_generator(), 6, root);
    const auto& victim = m.samples[4];
    write_label_mask(root / victim.mask, LabeledMask(32, 32));
    const auto report = build_graph_dataset(m, root, small_run_config(), 3);
    ASSERT_EQ(report.failures.size(), 1u);
    EXPECT_EQ(report.failures[0].id, victim.id);
    EXPECT_NE(report.failures[0].reason.find("empty"), std::string::npos);
    EXPECT_EQ(report.manifest.samples.size(), m.samples.size() - 1);
    for (const auto& s : report.manifest.samples) EXPECT_NE(s.id, victim.id);
    EXPECT_FALSE(fs::exists(root / "graphs" / (victim.id + ".json")));
}

TEST(GraphDataset, RebuildIsByteIdenticalForAnyJobCount) {
    const fs::path root = fresh_dir("gd_det");
    const auto m = generate_synthetic(small_generator(), 6, root);
    build_graph_dataset(m, root, small_run_config(), 1);
    const auto first = tree_bytes(root / "graphs");
    build_graph_dataset(m, root, small_run_config(), 4);
    EXPECT_EQ(tree_bytes(root / "graphs"), first);
    EXPECT_EQ(first.size(), m.samples.size());
}
