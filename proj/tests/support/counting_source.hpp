#pragma once

#include <atomic>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

#include "pdv/error.hpp"
#include "pdv/io.hpp"
#include "pdv/service.hpp"

namespace pdv::test {

/// In-memory data source that counts every read.
class CountingSource final : public service::DataSource {
 public:
  void put_embeddings(const std::string& path, EmbeddingRecords records) {
    std::lock_guard lock(mutex_);
    embeddings_[path] = std::move(records);
  }
  void put_text(const std::string& path, std::string text) {
    std::lock_guard lock(mutex_);
    texts_[path] = std::move(text);
  }

  EmbeddingRecords read_embeddings(const std::filesystem::path& path) override {
    ++embedding_reads;
    std::lock_guard lock(mutex_);
    const auto it = embeddings_.find(path.string());
    if (it == embeddings_.end()) throw Error(ErrorCode::io_failure, "no such file " + path.string());
    return it->second;
  }
  std::string read_text(const std::filesystem::path& path) override {
    ++text_reads;
    std::lock_guard lock(mutex_);
    const auto it = texts_.find(path.string());
    if (it == texts_.end()) throw Error(ErrorCode::io_failure, "no such file " + path.string());
    return it->second;
  }

  std::size_t reads() const { return embedding_reads.load() + text_reads.load(); }

  std::atomic<std::size_t> embedding_reads{0};
  std::atomic<std::size_t> text_reads{0};

 private:
  std::mutex mutex_;
  std::map<std::string, EmbeddingRecords> embeddings_;
  std::map<std::string, std::string> texts_;
};

}  // namespace pdv::test
