#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <sqlite3.h>

#include "json.hpp"
#include "saliencytune/errors.hpp"

namespace saliencytune {

enum class JobStatus { queued, running, done, failed };

inline std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "failed";
}

inline JobStatus job_status_from_string(const std::string& s) {
  if (s == "queued") return JobStatus::queued;
  if (s == "running") return JobStatus::running;
  if (s == "done") return JobStatus::done;
  if (s == "failed") return JobStatus::failed;
  throw InputError("unknown job status '" + s + "'");
}

struct StoredFeedback {
  std::int64_t id = 0;
  std::string sample_id;
  std::optional<std::size_t> corrected_label;
  std::optional<std::string> mask_file;  // relative to the data directory
  std::string source;
  std::int64_t created_at = 0;
};

struct FineTuneJob {
  std::int64_t id = 0;
  JobStatus status = JobStatus::queued;
  std::string input_checkpoint;
  std::optional<std::string> output_checkpoint;
  std::vector<std::int64_t> feedback_ids;
  nlohmann::json config;
  std::int64_t created_at = 0;
  std::optional<std::int64_t> started_at;
  std::optional<std::int64_t> finished_at;
  nlohmann::json metrics_before;
  nlohmann::json metrics_after;
  std::optional<std::size_t> best_epoch;
  std::string error;

  nlohmann::json to_json() const {
    nlohmann::json j{{"job_id", id},
                     {"status", to_string(status)},
                     {"input_checkpoint", input_checkpoint},
                     {"output_checkpoint", output_checkpoint ? nlohmann::json(*output_checkpoint) : nlohmann::json()},
                     {"feedback_ids", feedback_ids},
                     {"config", config},
                     {"created_at", created_at},
                     {"started_at", started_at ? nlohmann::json(*started_at) : nlohmann::json()},
                     {"finished_at", finished_at ? nlohmann::json(*finished_at) : nlohmann::json()},
                     {"metrics_before", metrics_before},
                     {"metrics_after", metrics_after},
                     {"best_epoch", best_epoch ? nlohmann::json(*best_epoch) : nlohmann::json()}};
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

struct StoredCheckpoint {
  std::string id;
  std::string file;
  std::optional<std::string> parent;
  std::optional<std::int64_t> job_id;
  std::int64_t created_at = 0;
};

namespace detail {

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw ResourceError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
  }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  ~Statement() { sqlite3_finalize(stmt_); }

  Statement& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(stmt_, i, v);
    return *this;
  }
  Statement& bind(int i, const std::string& v) {
    sqlite3_bind_text(stmt_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  template <typename T>
  Statement& bind(int i, const std::optional<T>& v) {
    if (v) return bind(i, *v);
    sqlite3_bind_null(stmt_, i);
    return *this;
  }

  // True while rows remain.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw ResourceError(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
  }

  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? reinterpret_cast<const char*>(p) : "";
  }
  std::optional<std::int64_t> opt_integer(int col) const {
    return is_null(col) ? std::nullopt : std::optional<std::int64_t>(integer(col));
  }
  std::optional<std::string> opt_text(int col) const {
    return is_null(col) ? std::nullopt : std::optional<std::string>(text(col));
  }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

}  // namespace detail

// Feedback records, fine-tune jobs and the checkpoint registry in one SQLite
// file. Feedback rows are never updated or deleted. All methods are serialized
// on an internal mutex.
class Store {
 public:
  explicit Store(const std::filesystem::path& file) {
    if (sqlite3_open(file.string().c_str(), &db_) != SQLITE_OK) {
      const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw ResourceError("cannot open store " + file.string() + ": " + msg);
    }
    exec(R"sql(
      PRAGMA journal_mode=WAL;
      CREATE TABLE IF NOT EXISTS feedback (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        sample_id TEXT NOT NULL,
        corrected_label INTEGER,
        mask_file TEXT,
        source TEXT NOT NULL,
        created_at INTEGER NOT NULL);
      CREATE TABLE IF NOT EXISTS jobs (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        status TEXT NOT NULL,
        input_checkpoint TEXT NOT NULL,
        output_checkpoint TEXT,
        config TEXT NOT NULL,
        created_at INTEGER NOT NULL,
        started_at INTEGER,
        finished_at INTEGER,
        metrics_before TEXT,
        metrics_after TEXT,
        best_epoch INTEGER,
        error TEXT);
      CREATE TABLE IF NOT EXISTS job_feedback (
        job_id INTEGER NOT NULL REFERENCES jobs(id),
        feedback_id INTEGER NOT NULL REFERENCES feedback(id),
        PRIMARY KEY (job_id, feedback_id));
      CREATE TABLE IF NOT EXISTS checkpoints (
        id TEXT PRIMARY KEY,
        file TEXT NOT NULL,
        parent TEXT,
        job_id INTEGER,
        created_at INTEGER NOT NULL);
      CREATE TABLE IF NOT EXISTS state (key TEXT PRIMARY KEY, value TEXT NOT NULL);
    )sql");
  }
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;
  ~Store() { sqlite3_close(db_); }

  std::int64_t add_feedback(const StoredFeedback& f) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "INSERT INTO feedback (sample_id, corrected_label, mask_file, source, created_at) "
                         "VALUES (?, ?, ?, ?, ?)");
    std::optional<std::int64_t> label;
    if (f.corrected_label) label = static_cast<std::int64_t>(*f.corrected_label);
    st.bind(1, f.sample_id).bind(2, label).bind(3, f.mask_file).bind(4, f.source).bind(5, f.created_at);
    st.step();
    return sqlite3_last_insert_rowid(db_);
  }

  std::optional<StoredFeedback> feedback(std::int64_t id) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "SELECT id, sample_id, corrected_label, mask_file, source, created_at FROM feedback "
                         "WHERE id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    return read_feedback(st);
  }

  // Feedback not referenced by any job that is queued, running or done.
  std::vector<StoredFeedback> pending_feedback() {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "SELECT id, sample_id, corrected_label, mask_file, source, created_at FROM feedback f "
                         "WHERE NOT EXISTS (SELECT 1 FROM job_feedback jf JOIN jobs j ON j.id = jf.job_id "
                         "WHERE jf.feedback_id = f.id AND j.status != 'failed') ORDER BY id");
    std::vector<StoredFeedback> out;
    while (st.step()) out.push_back(read_feedback(st));
    return out;
  }

  std::int64_t count_feedback() {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "SELECT COUNT(*) FROM feedback");
    st.step();
    return st.integer(0);
  }

  std::int64_t create_job(const std::string& input_checkpoint, const std::vector<std::int64_t>& feedback_ids,
                          const nlohmann::json& config, std::int64_t created_at) {
    std::lock_guard lock(mutex_);
    exec("BEGIN");
    try {
      detail::Statement st(db_, "INSERT INTO jobs (status, input_checkpoint, config, created_at) VALUES (?, ?, ?, ?)");
      st.bind(1, std::string("queued")).bind(2, input_checkpoint).bind(3, config.dump()).bind(4, created_at);
      st.step();
      const auto id = sqlite3_last_insert_rowid(db_);
      for (const auto fid : feedback_ids) {
        detail::Statement link(db_, "INSERT INTO job_feedback (job_id, feedback_id) VALUES (?, ?)");
        link.bind(1, id).bind(2, fid);
        link.step();
      }
      exec("COMMIT");
      return id;
    } catch (...) {
      exec("ROLLBACK");
      throw;
    }
  }

  void mark_running(std::int64_t id, std::int64_t at, const nlohmann::json& metrics_before) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "UPDATE jobs SET status = 'running', started_at = ?, metrics_before = ? "
                         "WHERE id = ? AND status = 'queued'");
    st.bind(1, at).bind(2, metrics_before.dump()).bind(3, id);
    st.step();
  }

  void mark_done(std::int64_t id, std::int64_t at, const std::string& output_checkpoint,
                 const nlohmann::json& metrics_after, std::size_t best_epoch) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "UPDATE jobs SET status = 'done', finished_at = ?, output_checkpoint = ?, metrics_after = ?, "
                         "best_epoch = ? WHERE id = ? AND status = 'running'");
    st.bind(1, at).bind(2, output_checkpoint).bind(3, metrics_after.dump())
        .bind(4, static_cast<std::int64_t>(best_epoch)).bind(5, id);
    st.step();
  }

  void mark_failed(std::int64_t id, std::int64_t at, const std::string& error) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "UPDATE jobs SET status = 'failed', finished_at = ?, error = ? "
                         "WHERE id = ? AND status IN ('queued', 'running')");
    st.bind(1, at).bind(2, error).bind(3, id);
    st.step();
  }

  // Jobs interrupted by a restart can never finish.
  void fail_unfinished(std::int64_t at) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "UPDATE jobs SET status = 'failed', finished_at = ?, error = 'interrupted by restart' "
                         "WHERE status IN ('queued', 'running')");
    st.bind(1, at);
    st.step();
  }

  std::optional<FineTuneJob> job(std::int64_t id) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_,
                         "SELECT id, status, input_checkpoint, output_checkpoint, config, created_at, started_at, "
                         "finished_at, metrics_before, metrics_after, best_epoch, error FROM jobs WHERE id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    FineTuneJob j;
    j.id = st.integer(0);
    j.status = job_status_from_string(st.text(1));
    j.input_checkpoint = st.text(2);
    j.output_checkpoint = st.opt_text(3);
    j.config = nlohmann::json::parse(st.text(4));
    j.created_at = st.integer(5);
    j.started_at = st.opt_integer(6);
    j.finished_at = st.opt_integer(7);
    if (!st.is_null(8)) j.metrics_before = nlohmann::json::parse(st.text(8));
    if (!st.is_null(9)) j.metrics_after = nlohmann::json::parse(st.text(9));
    if (!st.is_null(10)) j.best_epoch = static_cast<std::size_t>(st.integer(10));
    j.error = st.text(11);
    detail::Statement fb(db_, "SELECT feedback_id FROM job_feedback WHERE job_id = ? ORDER BY feedback_id");
    fb.bind(1, id);
    while (fb.step()) j.feedback_ids.push_back(fb.integer(0));
    return j;
  }

  std::optional<std::int64_t> latest_done_job() {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "SELECT id FROM jobs WHERE status = 'done' ORDER BY finished_at DESC, id DESC LIMIT 1");
    if (!st.step()) return std::nullopt;
    return st.integer(0);
  }

  void add_checkpoint(const StoredCheckpoint& c) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "INSERT INTO checkpoints (id, file, parent, job_id, created_at) VALUES (?, ?, ?, ?, ?)");
    st.bind(1, c.id).bind(2, c.file).bind(3, c.parent).bind(4, c.job_id).bind(5, c.created_at);
    st.step();
  }

  std::optional<StoredCheckpoint> checkpoint(const std::string& id) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "SELECT id, file, parent, job_id, created_at FROM checkpoints WHERE id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    return read_checkpoint(st);
  }

  std::vector<StoredCheckpoint> checkpoints() {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "SELECT id, file, parent, job_id, created_at FROM checkpoints ORDER BY rowid");
    std::vector<StoredCheckpoint> out;
    while (st.step()) out.push_back(read_checkpoint(st));
    return out;
  }

  std::optional<std::string> get_state(const std::string& key) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "SELECT value FROM state WHERE key = ?");
    st.bind(1, key);
    if (!st.step()) return std::nullopt;
    return st.text(0);
  }

  void set_state(const std::string& key, const std::string& value) {
    std::lock_guard lock(mutex_);
    detail::Statement st(db_, "INSERT INTO state (key, value) VALUES (?, ?) "
                              "ON CONFLICT(key) DO UPDATE SET value = excluded.value");
    st.bind(1, key).bind(2, value);
    st.step();
  }

 private:
  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      const std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw ResourceError("sqlite: " + msg);
    }
  }

  static StoredFeedback read_feedback(const detail::Statement& st) {
    StoredFeedback f;
    f.id = st.integer(0);
    f.sample_id = st.text(1);
    if (!st.is_null(2)) f.corrected_label = static_cast<std::size_t>(st.integer(2));
    f.mask_file = st.opt_text(3);
    f.source = st.text(4);
    f.created_at = st.integer(5);
    return f;
  }

  static StoredCheckpoint read_checkpoint(const detail::Statement& st) {
    return {st.text(0), st.text(1), st.opt_text(2), st.opt_integer(3), st.integer(4)};
  }

  sqlite3* db_ = nullptr;
  std::mutex mutex_;
};

}  // namespace saliencytune
