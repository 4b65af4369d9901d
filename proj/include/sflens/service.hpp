// Copyright 2026 The sf-lens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SFLENS_SERVICE_HPP_
#define SFLENS_SERVICE_HPP_

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "sflens/analytics.hpp"
#include "sflens/bundle.hpp"
#include "sflens/error.hpp"

namespace sflens {

struct ServiceConfig {
  /// A bundle directory or a directory whose subdirectories are bundles.
  std::filesystem::path bundle_root;
  std::string host = "127.0.0.1";
  int port = 8080;
  unsigned threads = 1;
  /// Persist finished embeddings under <bundle>/embeddings.
  bool persist_embeddings = true;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

using QueryParams = std::map<std::string, std::string, std::less<>>;

/// Loaded bundles plus the embedding cache. Handle() is safe to call from
/// any number of threads; POST /api/embed is the only route that changes
/// state, and finished embeddings are published by swapping a shared
/// pointer so readers never see a partial frame.
class ApiSession {
 public:
  explicit ApiSession(ServiceConfig config);
  ~ApiSession();
  ApiSession(const ApiSession&) = delete;
  ApiSession& operator=(const ApiSession&) = delete;

  ApiResponse Handle(std::string_view method, std::string_view path, const QueryParams& params,
                     std::string_view accept = {}, std::string_view body = {});

  /// Blocks until every submitted embedding job has finished.
  void WaitForJobs();

  std::vector<std::string> DatasetNames() const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct Dataset {
    std::string name;
    InferenceBundle bundle;
    std::vector<StudyDefinition> studies;
  };
  struct Job {
    std::atomic<int> iteration{0};
    int iterations = 0;
  };
  struct EmbedRequest {
    const Dataset* dataset = nullptr;
    std::string scope;
    EmbedParams params;
    std::vector<std::size_t> records;
    std::string key;
  };

  const Dataset& FindDataset(const QueryParams& params) const;
  EmbedRequest ParseEmbedRequest(const QueryParams& params) const;
  std::shared_ptr<const EmbeddingFrame> ReadyFrame(const EmbedRequest& request);
  std::shared_ptr<const EmbeddingFrame> RequireFrame(const EmbedRequest& request);

  ApiResponse Datasets() const;
  ApiResponse Studies(const QueryParams& params) const;
  ApiResponse Metrics(const QueryParams& params, std::string_view accept) const;
  ApiResponse RcCurveRoute(const QueryParams& params) const;
  ApiResponse Embedding(const QueryParams& params);
  ApiResponse Submit(const QueryParams& params);
  ApiResponse Clusters(const QueryParams& params);
  ApiResponse Failures(const QueryParams& params);
  ApiResponse Sweep(const QueryParams& params) const;
  ApiResponse Image(std::string_view id, const QueryParams& params) const;

  ServiceConfig config_;
  std::map<std::string, std::unique_ptr<const Dataset>, std::less<>> datasets_;

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const EmbeddingFrame>> ready_;
  std::map<std::string, std::shared_ptr<Job>> running_;
  std::map<std::string, std::string> failed_;
  std::vector<std::thread> workers_;
};

/// Runs the HTTP server for `session` until Stop() is called.
class HttpServer {
 public:
  explicit HttpServer(ApiSession& session);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  int Bind(const std::string& host, int port);
  /// Serves requests on the calling thread.
  void Listen();
  void Stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Maps an engine error to an HTTP status.
int HttpStatus(Errc code);

}  // namespace sflens

#endif  // SFLENS_SERVICE_HPP_
