#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <httplib.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "saliencytune/checkpoint.hpp"
#include "saliencytune/dataset.hpp"
#include "saliencytune/dataset_io.hpp"
#include "saliencytune/experiment.hpp"
#include "saliencytune/gradcam.hpp"
#include "saliencytune/image_io.hpp"
#include "saliencytune/metrics.hpp"
#include "saliencytune/store.hpp"
#include "saliencytune/trainer.hpp"

namespace saliencytune {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0: $SALIENCYTUNE_PORT, else 8080
  std::string data_dir;  // empty: $SALIENCYTUNE_DATA_DIR, else ./saliencytune-data
  std::string dataset;  // ISIC layout; empty: synthetic
  std::size_t synthetic_n = 300;
  std::uint64_t seed = 1;
  std::string checkpoint;  // initial model; empty: pretrained reference CNN
  std::size_t pretrain_epochs = 3;
  TrainingConfig training;  // defaults for jobs; requests override per job
  std::size_t http_threads = 8;
};

inline int resolve_port(const ServiceOptions& o) {
  if (o.port > 0) return o.port;
  if (const char* env = std::getenv("SALIENCYTUNE_PORT"); env && *env) {
    try {
      const int p = std::stoi(env);
      if (p > 0 && p < 65536) return p;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("invalid SALIENCYTUNE_PORT '") + env + "'");
  }
  return 8080;
}

inline std::filesystem::path resolve_data_dir(const ServiceOptions& o) {
  if (!o.data_dir.empty()) return o.data_dir;
  if (const char* env = std::getenv("SALIENCYTUNE_DATA_DIR"); env && *env) return env;
  return "saliencytune-data";
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

inline nlohmann::json openapi_document();

// Feedback loop over HTTP. Reads use the published immutable checkpoint;
// model-mutating work runs on a single worker thread, one job at a time.
class FeedbackService {
 public:
  explicit FeedbackService(ServiceOptions options)
      : options_(std::move(options)), data_dir_(resolve_data_dir(options_)) {
    options_.training.validate();
    std::filesystem::create_directories(data_dir_ / "checkpoints");
    std::filesystem::create_directories(data_dir_ / "artifacts");
    std::filesystem::create_directories(data_dir_ / "feedback");
    store_ = std::make_unique<Store>(data_dir_ / "store.sqlite3");
    store_->fail_unfinished(unix_now());
    load_samples();
    load_active_model();
    worker_ = std::thread([this] { worker_loop(); });
    install_routes();
  }

  FeedbackService(const FeedbackService&) = delete;
  FeedbackService& operator=(const FeedbackService&) = delete;

  ~FeedbackService() {
    stop();
    {
      std::lock_guard lock(queue_mutex_);
      shutting_down_ = true;
    }
    queue_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  // Binds and serves on a background thread; returns the bound port.
  int start() {
    const int requested = resolve_port(options_);
    if (!server_.bind_to_port(options_.host, requested))
      throw ResourceError(fmt::format("cannot bind {}:{}", options_.host, requested));
    port_ = requested;
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Binds an ephemeral port; for tests.
  int start_any_port() {
    port_ = server_.bind_to_any_port(options_.host);
    if (port_ <= 0) throw ResourceError("cannot bind an ephemeral port");
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread until stop().
  void listen() {
    port_ = resolve_port(options_);
    spdlog::info("serving on http://{}:{}", options_.host, port_);
    if (!server_.listen(options_.host, port_)) throw ResourceError(fmt::format("cannot listen on port {}", port_));
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (listener_.joinable()) listener_.join();
  }

  int port() const { return port_; }
  const std::filesystem::path& data_dir() const { return data_dir_; }
  std::string active_checkpoint_id() const {
    std::lock_guard lock(model_mutex_);
    return active_id_;
  }
  const std::vector<ImageSample>& held_out() const { return split_.test; }

 private:
  using Json = nlohmann::json;

  static void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
  }

  void load_samples() {
    std::vector<ImageSample> samples;
    if (!options_.dataset.empty()) {
      LoadOptions lo;
      lo.resize_to = Shape3{3, kSyntheticSize, kSyntheticSize};
      if (!options_.checkpoint.empty()) lo.resize_to = load_checkpoint(options_.checkpoint).input_shape();
      samples = load_dataset(options_.dataset, lo);
    } else {
      samples = generate_synthetic_dataset(options_.synthetic_n, options_.seed);
    }
    split_ = split(std::move(samples), {}, options_.seed, SplitMode::leakage_safe, false);
    for (std::size_t i = 0; i < split_.pool.size(); ++i) sample_index_[split_.pool[i].id] = i;
  }

  void load_active_model() {
    if (const auto active = store_->get_state("active_checkpoint")) {
      const auto c = store_->checkpoint(*active);
      if (!c) throw ResourceError("active checkpoint '" + *active + "' is not registered");
      publish(*active, load_checkpoint(data_dir_ / c->file));
      spdlog::info("resumed at checkpoint {}", *active);
      return;
    }
    ClassifierModel model = [&] {
      if (!options_.checkpoint.empty()) return load_checkpoint(options_.checkpoint);
      ExperimentConfig ec;
      ec.seed = options_.seed;
      ec.pretrain.epochs = options_.pretrain_epochs;
      ExperimentData data;
      data.split.pool = split_.pool;
      if (options_.dataset.empty() && options_.pretrain_epochs > 0)
        data.pretrain_set = generate_synthetic_dataset(ec.pretrain.n, options_.seed + 98);
      return baseline_model(ec, data);
    }();
    const std::string id = "initial";
    save_checkpoint(model, data_dir_ / "checkpoints" / (id + ".ckpt"));
    store_->add_checkpoint({id, "checkpoints/" + id + ".ckpt", std::nullopt, std::nullopt, unix_now()});
    store_->set_state("active_checkpoint", id);
    publish(id, std::move(model));
  }

  void publish(const std::string& id, ClassifierModel model) {
    auto ptr = std::make_shared<const ClassifierModel>(std::move(model));
    std::lock_guard lock(model_mutex_);
    active_ = std::move(ptr);
    active_id_ = id;
  }

  std::pair<std::string, std::shared_ptr<const ClassifierModel>> active() const {
    std::lock_guard lock(model_mutex_);
    return {active_id_, active_};
  }

  const ImageSample* find_sample(const std::string& id) const {
    const auto it = sample_index_.find(id);
    return it == sample_index_.end() ? nullptr : &split_.pool[it->second];
  }

  std::string write_artifact(const std::string& name, const std::string& png) {
    const auto path = data_dir_ / "artifacts" / name;
    if (!std::filesystem::exists(path)) write_file_atomic(path, png);
    return "/artifacts/" + name;
  }

  Json predict(const Tensor& image, const std::string& key) {
    const auto [ckpt, model] = active();
    const auto& cfg = options_.training;
    const auto e = explain(*model, image, std::nullopt, cfg.threshold, cfg.temperature);
    const auto h = image.height(), w = image.width();
    const auto stem = fmt::format("{}_{}", ckpt, key);
    const auto saliency = write_artifact(stem + "_saliency.png", encode_saliency_png(e.path.normalized().values, h, w));
    const auto mask = write_artifact(stem + "_mask.png", encode_mask_png(align_resolution(e.path.hard(cfg.threshold), h, w)));
    Json probs = Json::object();
    for (std::size_t c = 0; c < e.probabilities.size(); ++c) probs[default_class_names().at(c)] = e.probabilities[c];
    return {{"predicted_class", default_class_names().at(e.predicted_class)},
            {"predicted_index", e.predicted_class},
            {"probabilities", probs},
            {"saliency_png", saliency},
            {"mask_png", mask},
            {"degenerate", e.path.degenerate()},
            {"threshold", cfg.threshold},
            {"checkpoint_id", ckpt}};
  }

  void handle_predict(const httplib::Request& req, httplib::Response& res) {
    std::string image_bytes;
    std::string sample_id;
    if (req.is_multipart_form_data()) {
      if (req.has_file("sample_id")) sample_id = req.get_file_value("sample_id").content;
      if (req.has_file("image")) image_bytes = req.get_file_value("image").content;
    } else {
      Json body;
      try {
        body = Json::parse(req.body);
      } catch (const Json::exception&) {
        return send_error(res, 400, "request body is not valid JSON");
      }
      if (body.contains("sample_id") && body["sample_id"].is_string()) sample_id = body["sample_id"];
      if (body.contains("image")) {
        if (!body["image"].is_string()) return send_error(res, 422, "image must be a base64 string");
        try {
          image_bytes = base64_decode(body["image"].get<std::string>());
        } catch (const InputError& e) {
          return send_error(res, 422, e.what());
        }
      }
    }
    if (!sample_id.empty()) {
      const auto* s = find_sample(sample_id);
      if (!s) return send_error(res, 404, "unknown sample '" + sample_id + "'");
      auto out = predict(s->image, "s" + sha256_hex(s->id).substr(0, 16));
      out["sample_id"] = s->id;
      return send_json(res, 200, out);
    }
    if (image_bytes.empty()) return send_error(res, 422, "provide sample_id or image");
    Tensor image;
    try {
      const auto [_, model] = active();
      const auto& shape = model->input_shape();
      image = resize_image(tensor_from_mat(decode_image_bytes(image_bytes)), shape.height, shape.width);
    } catch (const InputError& e) {
      return send_error(res, 422, e.what());
    } catch (const cv::Exception&) {
      return send_error(res, 422, "image data could not be decoded");
    }
    send_json(res, 200, predict(image, "u" + sha256_hex(image_bytes).substr(0, 16)));
  }

  void handle_feedback(const httplib::Request& req, httplib::Response& res) {
    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const Json::exception&) {
      return send_error(res, 400, "request body is not valid JSON");
    }
    if (!body.contains("sample_id") || !body["sample_id"].is_string())
      return send_error(res, 422, "sample_id is required");
    const auto* s = find_sample(body["sample_id"].get<std::string>());
    if (!s) return send_error(res, 404, "unknown sample '" + body["sample_id"].get<std::string>() + "'");
    StoredFeedback f;
    f.sample_id = s->id;
    f.source = body.value("source", std::string("human"));
    f.created_at = unix_now();
    const auto has = [&](const char* k) { return body.contains(k) && !body[k].is_null(); };
    if (!has("corrected_label") && !has("corrected_mask"))
      return send_error(res, 422, "at least one of corrected_label and corrected_mask is required");
    if (has("corrected_label")) {
      const auto& l = body["corrected_label"];
      try {
        if (l.is_string())
          f.corrected_label = class_index(default_class_names(), l.get<std::string>());
        else if (l.is_number_unsigned() && l.get<std::size_t>() < default_class_names().size())
          f.corrected_label = l.get<std::size_t>();
        else
          return send_error(res, 422, "corrected_label must be a class name or index");
      } catch (const InputError& e) {
        return send_error(res, 422, e.what());
      }
    }
    std::optional<ExplanationMask> mask;
    if (has("corrected_mask")) {
      if (!body["corrected_mask"].is_string()) return send_error(res, 422, "corrected_mask must be a base64 PNG");
      try {
        mask = decode_mask_png(base64_decode(body["corrected_mask"].get<std::string>()));
      } catch (const InputError& e) {
        return send_error(res, 422, e.what());
      }
      if (mask->height() != s->image.height() || mask->width() != s->image.width())
        return send_error(res, 422,
                          fmt::format("mask is {}x{}; the image is {}x{}", mask->height(), mask->width(),
                                      s->image.height(), s->image.width()));
    }
    if (mask) {
      const auto png = encode_mask_png(*mask);
      f.mask_file = "feedback/" + sha256_hex(png) + ".png";
      write_file_atomic(data_dir_ / *f.mask_file, png);
    }
    const auto id = store_->add_feedback(f);
    send_json(res, 201, {{"feedback_id", id}});
  }

  void handle_finetune(const httplib::Request& req, httplib::Response& res) {
    Json body = Json::object();
    if (!req.body.empty()) {
      try {
        body = Json::parse(req.body);
      } catch (const Json::exception&) {
        return send_error(res, 400, "request body is not valid JSON");
      }
    }
    TrainingConfig config = options_.training;
    try {
      if (body.contains("config")) config.merge(body["config"]);
    } catch (const ConfigError& e) {
      return send_error(res, 422, e.what());
    }
    std::vector<std::int64_t> ids;
    const Json sel = body.contains("feedback_ids") ? body["feedback_ids"] : Json("all-pending");
    if (sel.is_string() && sel == "all-pending") {
      for (const auto& f : store_->pending_feedback()) ids.push_back(f.id);
      if (ids.empty()) return send_error(res, 422, "no pending feedback");
    } else if (sel.is_array() && !sel.empty()) {
      for (const auto& v : sel) {
        if (!v.is_number_integer()) return send_error(res, 422, "feedback_ids must be integers");
        const auto id = v.get<std::int64_t>();
        if (!store_->feedback(id)) return send_error(res, 422, fmt::format("unknown feedback id {}", id));
        ids.push_back(id);
      }
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    } else {
      return send_error(res, 422, "feedback_ids must be \"all-pending\" or a non-empty list");
    }
    std::string input = active_checkpoint_id();
    if (body.contains("input_checkpoint")) {
      if (!body["input_checkpoint"].is_string()) return send_error(res, 422, "input_checkpoint must be a string");
      input = body["input_checkpoint"].get<std::string>();
      if (!store_->checkpoint(input)) return send_error(res, 422, "unknown checkpoint '" + input + "'");
    }
    std::int64_t job_id = 0;
    {
      std::lock_guard lock(queue_mutex_);
      if (job_in_flight_) return send_error(res, 409, "a fine-tune job is already queued or running");
      job_id = store_->create_job(input, ids, config.to_json(), unix_now());
      job_in_flight_ = true;
      queue_.push_back(job_id);
    }
    queue_cv_.notify_one();
    send_json(res, 202, {{"job_id", job_id}, {"status", "queued"}});
  }

  void worker_loop() {
    while (true) {
      std::int64_t job_id = 0;
      {
        std::unique_lock lock(queue_mutex_);
        queue_cv_.wait(lock, [&] { return shutting_down_ || !queue_.empty(); });
        if (shutting_down_ && queue_.empty()) return;
        job_id = queue_.front();
        queue_.pop_front();
      }
      try {
        run_job(job_id);
      } catch (const std::exception& e) {
        spdlog::error("job {} failed: {}", job_id, e.what());
        store_->mark_failed(job_id, unix_now(), e.what());
      }
      std::lock_guard lock(queue_mutex_);
      job_in_flight_ = false;
    }
  }

  void run_job(std::int64_t job_id) {
    const auto job = store_->job(job_id);
    if (!job) throw ResourceError(fmt::format("job {} vanished", job_id));
    TrainingConfig config;
    config.merge(job->config);
    const auto in = store_->checkpoint(job->input_checkpoint);
    if (!in) throw ResourceError("unknown input checkpoint '" + job->input_checkpoint + "'");
    const auto model = load_checkpoint(data_dir_ / in->file);

    std::vector<FeedbackExample> examples;
    for (const auto fid : job->feedback_ids) {
      const auto f = store_->feedback(fid);
      if (!f) throw ResourceError(fmt::format("feedback {} vanished", fid));
      const auto* s = find_sample(f->sample_id);
      if (!s) throw InputError("feedback " + std::to_string(fid) + " refers to unknown sample " + f->sample_id);
      FeedbackRecord r;
      r.sample_id = f->sample_id;
      r.corrected_label = f->corrected_label;
      if (f->mask_file) r.corrected_mask = decode_mask_png(read_file(data_dir_ / *f->mask_file));
      r.source = f->source == "simulated" ? FeedbackSource::simulated : FeedbackSource::human;
      r.created_at = f->created_at;
      examples.push_back({*s, std::move(r)});
    }
    const auto before = evaluate(model, split_.test, config.threshold);
    store_->mark_running(job_id, unix_now(), before.to_json());
    spdlog::info("job {}: fine-tuning {} on {} feedback records", job_id, job->input_checkpoint, examples.size());
    auto result = finetune(model, examples, split_.validation, config);
    const auto after = evaluate(result.best, split_.test, config.threshold);
    const auto out_id = fmt::format("job{}", job_id);
    const auto file = "checkpoints/" + out_id + ".ckpt";
    save_checkpoint(result.best, data_dir_ / file);
    store_->add_checkpoint({out_id, file, job->input_checkpoint, job_id, unix_now()});
    store_->mark_done(job_id, unix_now(), out_id, after.to_json(), result.history.best_epoch);
    store_->set_state("active_checkpoint", out_id);
    publish(out_id, std::move(result.best));
    spdlog::info("job {} done: held-out avg_jaccard {:.4f} -> {:.4f}", job_id, before.avg_jaccard, after.avg_jaccard);
  }

  Json sample_json(const ImageSample& s) const {
    return {{"id", s.id},
            {"label", default_class_names().at(s.label)},
            {"has_mask", s.gt_mask.has_value()},
            {"image_png", "/samples/" + s.id + "/image.png"},
            {"mask_png", s.gt_mask ? Json("/samples/" + s.id + "/mask.png") : Json()}};
  }

  void install_routes() {
    server_.new_task_queue = [n = options_.http_threads] { return new httplib::ThreadPool(n); };

    server_.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) { handle_predict(req, res); });
    server_.Post("/feedback", [this](const httplib::Request& req, httplib::Response& res) { handle_feedback(req, res); });
    server_.Post("/finetune", [this](const httplib::Request& req, httplib::Response& res) { handle_finetune(req, res); });

    server_.Get("/feedback/:id", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.path_params.at("id"));
      const auto f = id ? store_->feedback(*id) : std::nullopt;
      if (!f) return send_error(res, 404, "unknown feedback");
      send_json(res, 200,
                {{"feedback_id", f->id},
                 {"sample_id", f->sample_id},
                 {"corrected_label", f->corrected_label ? Json(default_class_names().at(*f->corrected_label)) : Json()},
                 {"corrected_mask_png", f->mask_file ? Json(fmt::format("/feedback/{}/mask.png", f->id)) : Json()},
                 {"source", f->source},
                 {"created_at", f->created_at}});
    });
    server_.Get("/feedback/:id/mask.png", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.path_params.at("id"));
      const auto f = id ? store_->feedback(*id) : std::nullopt;
      if (!f || !f->mask_file) return send_error(res, 404, "no mask for this feedback");
      res.set_content(read_file(data_dir_ / *f->mask_file), "image/png");
    });

    server_.Get("/jobs/:id", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.path_params.at("id"));
      const auto job = id ? store_->job(*id) : std::nullopt;
      if (!job) return send_error(res, 404, "unknown job");
      send_json(res, 200, job->to_json());
    });

    server_.Get("/samples", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t page = 1, page_size = 20;
      try {
        if (req.has_param("page")) page = std::stoul(req.get_param_value("page"));
        if (req.has_param("page_size")) page_size = std::stoul(req.get_param_value("page_size"));
      } catch (const std::exception&) {
        return send_error(res, 400, "page and page_size must be positive integers");
      }
      if (page == 0 || page_size == 0 || page_size > 500)
        return send_error(res, 400, "page must be >= 1 and page_size in [1, 500]");
      const auto& pool = split_.pool;
      Json items = Json::array();
      for (std::size_t i = (page - 1) * page_size; i < std::min(pool.size(), page * page_size); ++i)
        items.push_back(sample_json(pool[i]));
      send_json(res, 200,
                {{"items", items},
                 {"page", page},
                 {"page_size", page_size},
                 {"total", pool.size()},
                 {"pages", (pool.size() + page_size - 1) / page_size}});
    });
    server_.Get("/samples/:id/image.png", [this](const httplib::Request& req, httplib::Response& res) {
      const auto* s = find_sample(req.path_params.at("id"));
      if (!s) return send_error(res, 404, "unknown sample");
      res.set_content(encode_png(mat_from_tensor(s->image)), "image/png");
    });
    server_.Get("/samples/:id/mask.png", [this](const httplib::Request& req, httplib::Response& res) {
      const auto* s = find_sample(req.path_params.at("id"));
      if (!s || !s->gt_mask) return send_error(res, 404, "no mask for this sample");
      res.set_content(encode_mask_png(*s->gt_mask), "image/png");
    });

    server_.Get("/checkpoints", [this](const httplib::Request&, httplib::Response& res) {
      Json items = Json::array();
      for (const auto& c : store_->checkpoints())
        items.push_back({{"id", c.id},
                         {"parent", c.parent ? Json(*c.parent) : Json()},
                         {"job_id", c.job_id ? Json(*c.job_id) : Json()},
                         {"created_at", c.created_at}});
      send_json(res, 200, {{"active", active_checkpoint_id()}, {"items", items}});
    });
    server_.Post("/checkpoints/:id/activate", [this](const httplib::Request& req, httplib::Response& res) {
      const auto& id = req.path_params.at("id");
      const auto c = store_->checkpoint(id);
      if (!c) return send_error(res, 404, "unknown checkpoint");
      std::lock_guard lock(queue_mutex_);
      if (job_in_flight_) return send_error(res, 409, "cannot roll back while a job is queued or running");
      publish(id, load_checkpoint(data_dir_ / c->file));
      store_->set_state("active_checkpoint", id);
      send_json(res, 200, {{"active", id}});
    });

    server_.Get("/metrics/latest", [this](const httplib::Request&, httplib::Response& res) {
      if (const auto id = store_->latest_done_job()) {
        const auto job = store_->job(*id);
        return send_json(res, 200,
                         {{"job_id", job->id},
                          {"checkpoint_id", *job->output_checkpoint},
                          {"before", job->metrics_before},
                          {"after", job->metrics_after}});
      }
      const auto [ckpt, model] = active();
      send_json(res, 200,
                {{"job_id", nullptr},
                 {"checkpoint_id", ckpt},
                 {"before", nullptr},
                 {"after", evaluate(*model, split_.test, options_.training.threshold).to_json()}});
    });

    server_.Get("/artifacts/:name", [this](const httplib::Request& req, httplib::Response& res) {
      const auto& name = req.path_params.at("name");
      if (name.find('/') != std::string::npos || name.find("..") != std::string::npos || !name.ends_with(".png"))
        return send_error(res, 404, "unknown artifact");
      const auto path = data_dir_ / "artifacts" / name;
      if (!std::filesystem::exists(path)) return send_error(res, 404, "unknown artifact");
      res.set_content(read_file(path), "image/png");
    });

    server_.Get("/spec", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, openapi_document());
    });

    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      spdlog::error("request failed: {}", msg);
      send_error(res, 500, msg);
    });
  }

  static std::optional<std::int64_t> parse_id(const std::string& s) {
    if (s.empty() || s.size() > 18 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      return std::nullopt;
    return std::stoll(s);
  }

  ServiceOptions options_;
  std::filesystem::path data_dir_;
  std::unique_ptr<Store> store_;
  DatasetSplit split_;  // pool: served samples; validation: model selection; test: before/after metrics
  std::map<std::string, std::size_t> sample_index_;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const ClassifierModel> active_;
  std::string active_id_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<std::int64_t> queue_;
  bool job_in_flight_ = false;
  bool shutting_down_ = false;
  std::thread worker_;

  httplib::Server server_;
  std::thread listener_;
  int port_ = 0;
};

inline nlohmann::json openapi_document() {
  using Json = nlohmann::json;
  const Json error_ref = {{"$ref", "#/components/schemas/Error"}};
  auto response = [&](const std::string& description, const Json& schema) {
    return Json{{"description", description}, {"content", {{"application/json", {{"schema", schema}}}}}};
  };
  auto error = [&](const std::string& description) { return response(description, error_ref); };
  auto png = [](const std::string& description) {
    return Json{{"description", description},
                {"content", {{"image/png", {{"schema", {{"type", "string"}, {"format", "binary"}}}}}}}};
  };
  auto id_param = [](const std::string& name, const std::string& type) {
    return Json::array({{{"name", name}, {"in", "path"}, {"required", true}, {"schema", {{"type", type}}}}});
  };
  Json paths;
  paths["/predict"]["post"] = {
      {"summary", "Classify a sample or uploaded image and render its explanation"},
      {"requestBody",
       {{"required", true},
        {"content",
         {{"application/json", {{"schema", {{"$ref", "#/components/schemas/PredictRequest"}}}}},
          {"multipart/form-data",
           {{"schema",
             {{"type", "object"},
              {"properties",
               {{"sample_id", {{"type", "string"}}}, {"image", {{"type", "string"}, {"format", "binary"}}}}}}}}}}}}},
      {"responses",
       {{"200", response("Prediction", {{"$ref", "#/components/schemas/Prediction"}})},
        {"404", error("Unknown sample")},
        {"422", error("Malformed image")}}}};
  paths["/feedback"]["post"] = {
      {"summary", "Record a label and/or mask correction"},
      {"requestBody",
       {{"required", true},
        {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/FeedbackRequest"}}}}}}}}},
      {"responses",
       {{"201", response("Stored", {{"type", "object"}, {"properties", {{"feedback_id", {{"type", "integer"}}}}}})},
        {"404", error("Unknown sample")},
        {"422", error("No correction given, or mask not binary")}}}};
  paths["/feedback/{id}"]["get"] = {{"summary", "A stored feedback record"},
                                    {"parameters", id_param("id", "integer")},
                                    {"responses", {{"200", response("Record", {{"type", "object"}})},
                                                   {"404", error("Unknown feedback")}}}};
  paths["/feedback/{id}/mask.png"]["get"] = {{"summary", "The stored corrected mask"},
                                             {"parameters", id_param("id", "integer")},
                                             {"responses", {{"200", png("Binary mask, 0 or 255")},
                                                            {"404", error("No mask")}}}};
  paths["/finetune"]["post"] = {
      {"summary", "Queue a fine-tune job over feedback records"},
      {"requestBody",
       {{"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/FinetuneRequest"}}}}}}}}},
      {"responses",
       {{"202", response("Queued", {{"type", "object"},
                                    {"properties", {{"job_id", {{"type", "integer"}}}, {"status", {{"type", "string"}}}}}})},
        {"409", error("A job is already queued or running")},
        {"422", error("No pending feedback or invalid overrides")}}}};
  paths["/jobs/{id}"]["get"] = {{"summary", "Fine-tune job status"},
                                {"parameters", id_param("id", "integer")},
                                {"responses", {{"200", response("Job", {{"$ref", "#/components/schemas/FineTuneJob"}})},
                                               {"404", error("Unknown job")}}}};
  paths["/samples"]["get"] = {
      {"summary", "Paginated review queue"},
      {"parameters",
       Json::array({{{"name", "page"}, {"in", "query"}, {"schema", {{"type", "integer"}, {"minimum", 1}}}},
                    {{"name", "page_size"},
                     {"in", "query"},
                     {"schema", {{"type", "integer"}, {"minimum", 1}, {"maximum", 500}}}}})},
      {"responses", {{"200", response("Page of samples", {{"type", "object"}})}}}};
  paths["/samples/{id}/image.png"]["get"] = {{"summary", "Sample image"},
                                             {"parameters", id_param("id", "string")},
                                             {"responses", {{"200", png("RGB image")}, {"404", error("Unknown sample")}}}};
  paths["/samples/{id}/mask.png"]["get"] = {{"summary", "Ground-truth mask"},
                                            {"parameters", id_param("id", "string")},
                                            {"responses", {{"200", png("Binary mask")}, {"404", error("No mask")}}}};
  paths["/checkpoints"]["get"] = {{"summary", "Checkpoint registry and active pointer"},
                                  {"responses", {{"200", response("Checkpoints", {{"type", "object"}})}}}};
  paths["/checkpoints/{id}/activate"]["post"] = {
      {"summary", "Roll the active pointer back to an existing checkpoint"},
      {"parameters", id_param("id", "string")},
      {"responses",
       {{"200", response("Activated", {{"type", "object"}})},
        {"404", error("Unknown checkpoint")},
        {"409", error("A job is in flight")}}}};
  paths["/metrics/latest"]["get"] = {{"summary", "Held-out metrics of the latest finished job"},
                                     {"responses", {{"200", response("Metrics", {{"type", "object"}})}}}};
  paths["/artifacts/{name}"]["get"] = {{"summary", "Rendered saliency or mask PNG"},
                                       {"parameters", id_param("name", "string")},
                                       {"responses", {{"200", png("PNG")}, {"404", error("Unknown artifact")}}}};
  paths["/spec"]["get"] = {{"summary", "This document"},
                           {"responses", {{"200", response("OpenAPI document", {{"type", "object"}})}}}};

  Json schemas;
  schemas["Error"] = {{"type", "object"}, {"properties", {{"error", {{"type", "string"}}}}}};
  schemas["PredictRequest"] = {
      {"type", "object"},
      {"properties",
       {{"sample_id", {{"type", "string"}}}, {"image", {{"type", "string"}, {"format", "byte"}}}}}};
  schemas["Prediction"] = {
      {"type", "object"},
      {"properties",
       {{"predicted_class", {{"type", "string"}, {"enum", default_class_names()}}},
        {"probabilities", {{"type", "object"}, {"additionalProperties", {{"type", "number"}}}}},
        {"saliency_png", {{"type", "string"}}},
        {"mask_png", {{"type", "string"}}},
        {"checkpoint_id", {{"type", "string"}}}}}};
  schemas["FeedbackRequest"] = {
      {"type", "object"},
      {"required", {"sample_id"}},
      {"properties",
       {{"sample_id", {{"type", "string"}}},
        {"corrected_label", {{"type", "string"}, {"enum", default_class_names()}}},
        {"corrected_mask", {{"type", "string"}, {"format", "byte"}, {"description", "PNG, pixels 0 or 255"}}}}}};
  schemas["FinetuneRequest"] = {
      {"type", "object"},
      {"properties",
       {{"feedback_ids",
         {{"oneOf", Json::array({{{"type", "string"}, {"enum", {"all-pending"}}},
                                 {{"type", "array"}, {"items", {{"type", "integer"}}}}})}}},
        {"input_checkpoint", {{"type", "string"}}},
        {"config", {{"type", "object"}}}}}};
  schemas["FineTuneJob"] = {
      {"type", "object"},
      {"properties",
       {{"job_id", {{"type", "integer"}}},
        {"status", {{"type", "string"}, {"enum", {"queued", "running", "done", "failed"}}}},
        {"input_checkpoint", {{"type", "string"}}},
        {"output_checkpoint", {{"type", "string"}, {"nullable", true}}},
        {"feedback_ids", {{"type", "array"}, {"items", {{"type", "integer"}}}}},
        {"config", {{"type", "object"}}},
        {"metrics_before", {{"type", "object"}, {"nullable", true}}},
        {"metrics_after", {{"type", "object"}, {"nullable", true}}}}}};
  return {{"openapi", "3.0.3"},
          {"info", {{"title", "SaliencyTune feedback service"}, {"version", "1.0.0"}}},
          {"paths", paths},
          {"components", {{"schemas", schemas}}}};
}

// Blocking entry point for the CLI.
inline int run_service(const ServiceOptions& options) {
  FeedbackService service(options);
  service.listen();
  return 0;
}

}  // namespace saliencytune
