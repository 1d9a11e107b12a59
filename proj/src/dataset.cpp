#include "cds/dataset.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cds/text.hpp"

namespace cds {

const char* quality_name(DatasetQuality q) {
    switch (q) {
        case DatasetQuality::Expert: return "expert";
        case DatasetQuality::Medium: return "medium";
        case DatasetQuality::MediumReplay: return "medium-replay";
        case DatasetQuality::UndirectedSplit: return "undirected-split";
        case DatasetQuality::DirectedSplit: return "directed-split";
    }
    throw std::invalid_argument("unknown dataset quality tag");
}

DatasetQuality quality_from_name(const std::string& name) {
    for (const DatasetQuality q :
         {DatasetQuality::Expert, DatasetQuality::Medium, DatasetQuality::MediumReplay,
          DatasetQuality::UndirectedSplit, DatasetQuality::DirectedSplit})
        if (name == quality_name(q)) return q;
    throw std::invalid_argument("unknown dataset quality '" + name + "'");
}

void write_dataset(std::ostream& out, const TaskDataset& data) {
    if (data.manifest.size != data.transitions.size())
        throw std::invalid_argument("manifest size does not match transition count");
    nlohmann::json header;
    header["version"] = 1;
    header["task"] = data.task;
    header["quality"] = quality_name(data.manifest.quality);
    header["seed"] = data.manifest.seed;
    header["behavior"] = data.manifest.behavior;
    header["size"] = data.manifest.size;
    out << header.dump() << '\n';
    for (const Transition& t : data.transitions) {
        out << t.s << ' ' << t.a << ' ' << format_double(t.r) << ' ' << t.s_next << ' '
            << (t.done ? 1 : 0) << ' ' << t.origin_task << '\n';
    }
}

TaskDataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("dataset stream is empty");

    const nlohmann::json header = nlohmann::json::parse(line);
    if (!header.is_object()) throw std::invalid_argument("dataset header is not a JSON object");
    for (const char* field : {"version", "task", "quality", "seed", "behavior", "size"})
        if (!header.contains(field))
            throw std::invalid_argument(std::string("dataset header missing field '") + field + "'");
    if (header.at("version").get<int>() != 1)
        throw std::invalid_argument("unsupported dataset version " + header.at("version").dump());

    TaskDataset data;
    data.task = header.at("task").get<index_t>();
    data.manifest.quality = quality_from_name(header.at("quality").get<std::string>());
    data.manifest.seed = header.at("seed").get<std::uint64_t>();
    data.manifest.behavior = header.at("behavior").get<std::string>();
    data.manifest.size = header.at("size").get<std::size_t>();
    data.transitions.reserve(data.manifest.size);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 6)
            throw std::invalid_argument("dataset line " + std::to_string(line_no) + " has " +
                                        std::to_string(fields.size()) + " fields, expected 6");
        Transition t;
        t.s = static_cast<index_t>(parse_int(fields[0]));
        t.a = static_cast<index_t>(parse_int(fields[1]));
        t.r = parse_double(fields[2]);
        t.s_next = static_cast<index_t>(parse_int(fields[3]));
        const long long done = parse_int(fields[4]);
        if (done != 0 && done != 1)
            throw std::invalid_argument("dataset line " + std::to_string(line_no) +
                                        ": done flag must be 0 or 1");
        t.done = done == 1;
        t.origin_task = static_cast<index_t>(parse_int(fields[5]));
        data.transitions.push_back(t);
    }
    if (data.transitions.size() != data.manifest.size)
        throw std::invalid_argument("dataset holds " + std::to_string(data.transitions.size()) +
                                    " transitions but manifest declares " +
                                    std::to_string(data.manifest.size));
    return data;
}

void save_dataset(const std::string& path, const TaskDataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_dataset(out, data);
    if (!out) throw std::runtime_error("failed writing dataset to '" + path + "'");
}

TaskDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
    return read_dataset(in);
}

}  // namespace cds
