#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cds/transition.hpp"

namespace cds {

enum class DatasetQuality {
    Expert = 0,
    Medium,
    MediumReplay,
    UndirectedSplit,
    DirectedSplit,
};

const char* quality_name(DatasetQuality q);
DatasetQuality quality_from_name(const std::string& name);

struct DatasetManifest {
    DatasetQuality quality = DatasetQuality::Medium;
    std::uint64_t seed = 0;
    std::string behavior;  // free-form description of the generating policy
    std::size_t size = 0;  // must equal the transition count

    bool operator==(const DatasetManifest&) const = default;
};

struct TaskDataset {
    index_t task = 0;
    std::vector<Transition> transitions;
    DatasetManifest manifest;

    bool operator==(const TaskDataset&) const = default;
};

// Text format: one JSON manifest line, then one line per transition
// ("s a r s_next done origin"). Rewards are written in shortest round-trip
// form, so write -> read -> write is byte-identical.
void write_dataset(std::ostream& out, const TaskDataset& data);
TaskDataset read_dataset(std::istream& in);

void save_dataset(const std::string& path, const TaskDataset& data);
TaskDataset load_dataset(const std::string& path);

}  // namespace cds
