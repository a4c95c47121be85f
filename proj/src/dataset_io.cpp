#include "ambl/dataset_io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ambl {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

std::string serialize_split(const std::vector<dyck::Example>& split) {
  std::string out;
  out.reserve(split.size() * 24);
  for (const auto& ex : split) {
    out += ex.seq.str();
    out += '\t';
    out += dyck::is_true(ex.label) ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::vector<dyck::Example> parse_split(const std::string& text, const fs::path& origin) {
  std::vector<dyck::Example> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab + 2 != line.size() || (line[tab + 1] != '0' && line[tab + 1] != '1')) {
      throw std::runtime_error(origin.string() + ":" + std::to_string(lineno) + ": malformed dataset line");
    }
    out.push_back({dyck::ParenSequence::parse(std::string_view(line).substr(0, tab)),
                   dyck::to_label(line[tab + 1] == '1')});
  }
  return out;
}

nlohmann::json class_counts(const std::vector<dyck::Example>& split) {
  long t = 0;
  for (const auto& ex : split) t += dyck::is_true(ex.label);
  return {{"true", t}, {"false", static_cast<long>(split.size()) - t}};
}

constexpr const char* kSplitNames[] = {"train", "val_id", "test_ood"};

}  // namespace

std::string dataset_hash(const dyck::DatasetBundle& bundle) {
  std::string all;
  for (const auto* split : {&bundle.train, &bundle.val_id, &bundle.test_ood}) {
    all += serialize_split(*split);
    all += "--\n";
  }
  return sha256_hex(all);
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string write_dataset(const dyck::DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  const std::vector<dyck::Example>* splits[] = {&bundle.train, &bundle.val_id, &bundle.test_ood};
  nlohmann::json sizes, counts;
  for (int i = 0; i < 3; ++i) {
    write_file_atomic(dir / (std::string(kSplitNames[i]) + ".tsv"), serialize_split(*splits[i]));
    sizes[kSplitNames[i]] = splits[i]->size();
    counts[kSplitNames[i]] = class_counts(*splits[i]);
  }
  const std::string hash = dataset_hash(bundle);
  nlohmann::json manifest = {
      {"format", "ambl-dataset-v1"},
      {"generation_seed", bundle.generation_seed},
      {"sizes", sizes},
      {"class_counts", counts},
      {"content_hash", hash},
  };
  write_file_atomic(dir / "dataset.json", manifest.dump(2) + "\n");
  return hash;
}

dyck::DatasetBundle read_dataset(const fs::path& dir, std::string* content_hash) {
  const auto manifest = nlohmann::json::parse(read_file(dir / "dataset.json"));
  dyck::DatasetBundle bundle;
  bundle.generation_seed = manifest.at("generation_seed").get<uint64_t>();
  bundle.train = parse_split(read_file(dir / "train.tsv"), dir / "train.tsv");
  bundle.val_id = parse_split(read_file(dir / "val_id.tsv"), dir / "val_id.tsv");
  bundle.test_ood = parse_split(read_file(dir / "test_ood.tsv"), dir / "test_ood.tsv");
  const std::string hash = dataset_hash(bundle);
  if (hash != manifest.at("content_hash").get<std::string>()) {
    throw std::runtime_error("dataset in " + dir.string() + " does not match its recorded content hash");
  }
  if (content_hash) *content_hash = hash;
  return bundle;
}

}  // namespace ambl
