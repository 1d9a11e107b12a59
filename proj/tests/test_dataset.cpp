#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "cds/dataset.hpp"

using namespace cds;

namespace {

TaskDataset sample_dataset() {
    TaskDataset data;
    data.task = 2;
    data.transitions = {
        {0, 1, 0.1, 3, false, 2},
        {3, 0, 1.0 / 3.0, 4, true, 1},
        {4, 2, -2.5e-300, 0, false, 0},
        {1, 1, 6.02214076e23, 1, false, 2},
        {2, 3, 0.0, 2, true, 2},
    };
    data.manifest = {DatasetQuality::MediumReplay, 987654321123456789ULL,
                     "epsilon-greedy snapshot", data.transitions.size()};
    return data;
}

}  // namespace

TEST_CASE("quality tags round-trip by name") {
    for (const DatasetQuality q :
         {DatasetQuality::Expert, DatasetQuality::Medium, DatasetQuality::MediumReplay,
          DatasetQuality::UndirectedSplit, DatasetQuality::DirectedSplit})
        CHECK(quality_from_name(quality_name(q)) == q);
    CHECK_THROWS_AS(quality_from_name("novice"), std::invalid_argument);
}

TEST_CASE("write -> read -> write is lossless and byte-identical") {
    const TaskDataset data = sample_dataset();
    std::ostringstream first;
    write_dataset(first, data);

    std::istringstream in(first.str());
    const TaskDataset back = read_dataset(in);
    CHECK(back == data);

    std::ostringstream second;
    write_dataset(second, back);
    CHECK(second.str() == first.str());
}

TEST_CASE("write rejects a manifest that lies about the size") {
    TaskDataset data = sample_dataset();
    data.manifest.size += 1;
    std::ostringstream out;
    CHECK_THROWS_AS(write_dataset(out, data), std::invalid_argument);
}

TEST_CASE("read reports malformed inputs") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_dataset(empty), std::invalid_argument);

    std::istringstream no_field(R"({"behavior":"x","seed":1,"size":0,"task":0,"version":1})"
                                "\n");
    CHECK_THROWS_WITH_AS(read_dataset(no_field), doctest::Contains("quality"),
                         std::invalid_argument);

    std::istringstream bad_version(
        R"({"behavior":"x","quality":"medium","seed":1,"size":0,"task":0,"version":9})"
        "\n");
    CHECK_THROWS_AS(read_dataset(bad_version), std::invalid_argument);

    std::istringstream short_line(
        R"({"behavior":"x","quality":"medium","seed":1,"size":1,"task":0,"version":1})"
        "\n0 1 0.5 2\n");
    CHECK_THROWS_WITH_AS(read_dataset(short_line), doctest::Contains("expected 6"),
                         std::invalid_argument);

    std::istringstream bad_done(
        R"({"behavior":"x","quality":"medium","seed":1,"size":1,"task":0,"version":1})"
        "\n0 1 0.5 2 7 0\n");
    CHECK_THROWS_WITH_AS(read_dataset(bad_done), doctest::Contains("done"), std::invalid_argument);

    std::istringstream wrong_count(
        R"({"behavior":"x","quality":"medium","seed":1,"size":3,"task":0,"version":1})"
        "\n0 1 0.5 2 0 0\n");
    CHECK_THROWS_WITH_AS(read_dataset(wrong_count), doctest::Contains("declares"),
                         std::invalid_argument);
}

TEST_CASE("file helpers round-trip through disk") {
    const TaskDataset data = sample_dataset();
    const std::string path = "test_dataset_roundtrip.txt";
    save_dataset(path, data);
    CHECK(load_dataset(path) == data);
    CHECK_THROWS_AS(load_dataset("does_not_exist.txt"), std::runtime_error);
    std::remove(path.c_str());
}
