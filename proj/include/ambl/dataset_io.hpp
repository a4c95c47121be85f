#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ambl/dyck.hpp"

namespace ambl {

std::string sha256_hex(std::string_view bytes);

// Writes `<dir>/{train,val_id,test_ood}.tsv` as "<sequence>\t<0|1>" lines and
// a `<dir>/dataset.json` sidecar with seeds, sizes, class counts and the
// content hash. Returns the content hash.
std::string write_dataset(const dyck::DatasetBundle& bundle, const std::filesystem::path& dir);

// Reads a directory written by write_dataset; verifies the content hash.
dyck::DatasetBundle read_dataset(const std::filesystem::path& dir, std::string* content_hash = nullptr);

// Hash over the serialized splits, independent of where they are stored.
std::string dataset_hash(const dyck::DatasetBundle& bundle);

// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace ambl
