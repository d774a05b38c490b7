#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "candlab/dataset.hpp"
#include "candlab/review_session.hpp"

namespace candlab {

inline constexpr int kDefaultReviewPort = 7878;

/// HTTP front end for a ReviewSession.
///
///   GET  /api/pairs/next?reviewer=NAME  200 pair JSON, 204 when none
///   GET  /api/images/ID                 200 image/png, 404 unknown id
///   POST /api/decisions                 201 recorded, 400 unknown pair or bad verdict
///   GET  /api/progress                  200 {total, decided, pending, leased}
///   GET  /                              static files from `static_dir`
class ReviewServer {
 public:
  /// `test` and `train` supply images by record id; a test id shadows an
  /// equal train id. Both datasets must outlive the server.
  ReviewServer(ReviewSession& session, const CandidateDataset& test, const CandidateDataset& train,
               std::filesystem::path static_dir = {});
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host = "127.0.0.1", int port = kDefaultReviewPort);
  /// Serves until stop(). Requires bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace candlab
