// Python bindings for the pipeline: encoding, the STDP conv layer, the
// classifier head, task construction, and the experiment drivers. Arrays
// cross the boundary as numpy copies; nothing here keeps references into
// Python-owned memory.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spikecl/cl_head.hpp"
#include "spikecl/config.hpp"
#include "spikecl/dog_encoding.hpp"
#include "spikecl/experiment.hpp"
#include "spikecl/mnist_io.hpp"
#include "spikecl/stdp_conv.hpp"

namespace py = pybind11;
using namespace spikecl;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<LabeledImage> to_images(const U8Array& images, const U8Array& labels) {
  const py::buffer_info ib = images.request();
  const py::buffer_info lb = labels.request();
  std::size_t count = 0, stride = 0;
  if (ib.ndim == 2 && ib.shape[1] == kImagePixels) {
    count = std::size_t(ib.shape[0]);
    stride = kImagePixels;
  } else if (ib.ndim == 3 && ib.shape[1] == kImageRows && ib.shape[2] == kImageCols) {
    count = std::size_t(ib.shape[0]);
    stride = kImagePixels;
  } else {
    throw std::invalid_argument("images must have shape (N, 784) or (N, 28, 28)");
  }
  if (lb.ndim != 1 || std::size_t(lb.shape[0]) != count)
    throw std::invalid_argument("labels must have shape (N,) matching the images");
  std::vector<LabeledImage> out(count);
  const auto* ip = static_cast<const std::uint8_t*>(ib.ptr);
  const auto* lp = static_cast<const std::uint8_t*>(lb.ptr);
  for (std::size_t i = 0; i < count; ++i) {
    std::memcpy(out[i].pixels.data(), ip + i * stride, kImagePixels);
    out[i].label = lp[i];
  }
  return out;
}

std::array<std::uint8_t, kImagePixels> to_image(const U8Array& image) {
  const py::buffer_info b = image.request();
  const bool flat = b.ndim == 1 && b.shape[0] == kImagePixels;
  const bool square = b.ndim == 2 && b.shape[0] == kImageRows && b.shape[1] == kImageCols;
  if (!flat && !square)
    throw std::invalid_argument("image must have shape (784,) or (28, 28)");
  std::array<std::uint8_t, kImagePixels> out{};
  std::memcpy(out.data(), b.ptr, kImagePixels);
  return out;
}

py::tuple images_to_numpy(const std::vector<LabeledImage>& data) {
  U8Array images({py::ssize_t(data.size()), py::ssize_t(kImagePixels)});
  U8Array labels(py::ssize_t(data.size()));
  auto* ip = images.mutable_data();
  auto* lp = labels.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::memcpy(ip + i * kImagePixels, data[i].pixels.data(), kImagePixels);
    lp[i] = data[i].label;
  }
  return py::make_tuple(std::move(images), std::move(labels));
}

std::string activation_name(HeadConfig::Activation a) {
  return a == HeadConfig::Activation::kRelu ? "relu" : "sigmoid";
}

HeadConfig::Activation activation_from(const std::string& name) {
  if (name == "relu") return HeadConfig::Activation::kRelu;
  if (name == "sigmoid") return HeadConfig::Activation::kSigmoid;
  throw std::invalid_argument("activation must be \"relu\" or \"sigmoid\"");
}

std::vector<std::uint8_t> to_u8_vector(const U8Array& arr) {
  const py::buffer_info b = arr.request();
  if (b.ndim != 1) throw std::invalid_argument("expected a one-dimensional uint8 array");
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  return std::vector<std::uint8_t>(p, p + b.shape[0]);
}

}  // namespace

PYBIND11_MODULE(spikecl, m) {
  m.doc() = "Spiking-feature continual-learning pipeline";

  py::class_<DogConfig>(m, "DogConfig")
      .def(py::init<>())
      .def_readwrite("window", &DogConfig::window)
      .def_readwrite("sigma_center", &DogConfig::sigma_center)
      .def_readwrite("sigma_surround", &DogConfig::sigma_surround)
      .def_readwrite("contrast_threshold", &DogConfig::contrast_threshold)
      .def_readwrite("n_time_bins", &DogConfig::n_time_bins)
      .def("validate", &DogConfig::validate);

  py::class_<ConvConfig>(m, "ConvConfig")
      .def(py::init<>())
      .def_readwrite("n_maps", &ConvConfig::n_maps)
      .def_readwrite("kernel_size", &ConvConfig::kernel_size)
      .def_readwrite("threshold", &ConvConfig::threshold)
      .def_readwrite("a_plus_init", &ConvConfig::a_plus_init)
      .def_readwrite("a_minus_init", &ConvConfig::a_minus_init)
      .def_readwrite("schedule_period", &ConvConfig::schedule_period)
      .def_readwrite("rate_factor", &ConvConfig::rate_factor)
      .def_readwrite("a_plus_cap", &ConvConfig::a_plus_cap)
      .def_readwrite("neighborhood_halfwidth", &ConvConfig::neighborhood_halfwidth)
      .def_readwrite("init_mean", &ConvConfig::init_mean)
      .def_readwrite("init_std", &ConvConfig::init_std)
      .def_readwrite("init_clamp_lo", &ConvConfig::init_clamp_lo)
      .def_readwrite("init_clamp_hi", &ConvConfig::init_clamp_hi)
      .def_readwrite("convergence_threshold", &ConvConfig::convergence_threshold)
      .def_readwrite("max_passes", &ConvConfig::max_passes)
      .def_readwrite("pool_window", &ConvConfig::pool_window)
      .def_readwrite("pool_stride", &ConvConfig::pool_stride)
      .def("validate", &ConvConfig::validate)
      .def("conv_grid", &ConvConfig::conv_grid)
      .def("pooled_grid", &ConvConfig::pooled_grid)
      .def("feature_dim", &ConvConfig::feature_dim);

  py::class_<HeadConfig>(m, "HeadConfig")
      .def(py::init<>())
      .def_readwrite("n_in", &HeadConfig::n_in)
      .def_readwrite("n_hidden", &HeadConfig::n_hidden)
      .def_readwrite("xi", &HeadConfig::xi)
      .def_readwrite("init_scale", &HeadConfig::init_scale)
      .def_readwrite("freeze_old_outputs", &HeadConfig::freeze_old_outputs)
      .def_property(
          "activation", [](const HeadConfig& c) { return activation_name(c.activation); },
          [](HeadConfig& c, const std::string& name) { c.activation = activation_from(name); })
      .def("validate", &HeadConfig::validate);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("mode", &ExperimentConfig::mode)
      .def_readwrite("replay_fraction", &ExperimentConfig::replay_fraction)
      .def_readwrite("lambda_", &ExperimentConfig::lambda)
      .def_readwrite("eta", &ExperimentConfig::eta)
      .def_readwrite("minibatch_size", &ExperimentConfig::minibatch_size)
      .def_readwrite("minibatches_per_epoch", &ExperimentConfig::minibatches_per_epoch)
      .def_readwrite("epochs_per_task", &ExperimentConfig::epochs_per_task)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("pipeline_seed", &ExperimentConfig::pipeline_seed)
      .def_readwrite("n_validation", &ExperimentConfig::n_validation)
      .def_readwrite("stdp_images", &ExperimentConfig::stdp_images)
      .def_readwrite("data_dir", &ExperimentConfig::data_dir)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir)
      .def_readwrite("cache_dir", &ExperimentConfig::cache_dir)
      .def_readwrite("dog", &ExperimentConfig::dog)
      .def_readwrite("conv", &ExperimentConfig::conv)
      .def_readwrite("head", &ExperimentConfig::head)
      .def("validate", &ExperimentConfig::validate)
      .def("task_items", &ExperimentConfig::task_items)
      .def("effective_cache_dir", &ExperimentConfig::effective_cache_dir);

  m.def("parse_config_text", &parse_config_text, py::arg("json_text"));
  m.def("load_config_file", &load_config_file, py::arg("path"));
  m.def("config_to_json", &config_to_json, py::arg("config"), py::arg("indent") = 2);
  m.def(
      "apply_override",
      [](const std::string& json_text, const std::string& assignment) {
        std::string text = json_text;
        apply_override_text(text, assignment);
        return text;
      },
      py::arg("json_text"), py::arg("assignment"));

  py::class_<SpikeWave>(m, "SpikeWave")
      .def(py::init<>())
      .def_readonly("n_time_bins", &SpikeWave::n_time_bins)
      .def("spike_count", &SpikeWave::spike_count)
      .def("at", [](const SpikeWave& w, int ch, int r, int c) { return w.at(ch, r, c); })
      .def_property_readonly("times", [](const SpikeWave& w) {
        py::array_t<std::int16_t> arr({2, kImageRows, kImageCols});
        std::memcpy(arr.mutable_data(), w.times.data(), w.times.size() * sizeof(std::int16_t));
        return arr;
      });

  m.def("task_digits", &task_digits, py::arg("task_index"));
  m.def(
      "load_idx",
      [](const std::string& images_path, const std::string& labels_path) {
        return images_to_numpy(load_idx(images_path, labels_path));
      },
      py::arg("images_path"), py::arg("labels_path"));
  m.def(
      "split_train_validation",
      [](const U8Array& images, const U8Array& labels, std::size_t n_validation,
         std::uint64_t seed) {
        auto [train, validation] =
            split_train_validation(to_images(images, labels), n_validation, seed);
        return py::make_tuple(images_to_numpy(train), images_to_numpy(validation));
      },
      py::arg("images"), py::arg("labels"), py::arg("n_validation"), py::arg("seed"));

  m.def(
      "dog_kernel",
      [](const DogConfig& config) {
        const std::vector<double> k = dog_kernel(config);
        py::array_t<double> arr({config.window, config.window});
        std::memcpy(arr.mutable_data(), k.data(), k.size() * sizeof(double));
        return arr;
      },
      py::arg("config"));
  m.def(
      "encode", [](const U8Array& image, const DogConfig& config) {
        const auto pixels = to_image(image);
        return encode(std::span<const std::uint8_t>(pixels.data(), pixels.size()), config);
      },
      py::arg("image"), py::arg("config"));

  py::class_<ConvLayerState>(m, "ConvLayerState")
      .def_readonly("n_maps", &ConvLayerState::n_maps)
      .def_readonly("kernel_size", &ConvLayerState::kernel_size)
      .def_readonly("a_plus", &ConvLayerState::a_plus)
      .def_readonly("a_minus", &ConvLayerState::a_minus)
      .def_readonly("images_seen", &ConvLayerState::images_seen)
      .def("conv_grid", &ConvLayerState::conv_grid)
      .def_property_readonly("weights", [](const ConvLayerState& s) {
        py::array_t<double> arr({s.n_maps, 2, s.kernel_size, s.kernel_size});
        std::memcpy(arr.mutable_data(), s.weights.data(), s.weights.size() * sizeof(double));
        return arr;
      });

  m.def("init_conv_state", &init_conv_state, py::arg("config"), py::arg("seed"));
  m.def("convergence_metric", &convergence_metric, py::arg("state"));
  m.def(
      "train_conv",
      [](const U8Array& images, const U8Array& labels, const DogConfig& dog,
         const ConvConfig& conv, std::uint64_t seed) {
        const std::vector<LabeledImage> data = to_images(images, labels);
        std::vector<SpikeWave> waves;
        waves.reserve(data.size());
        for (const LabeledImage& img : data)
          waves.push_back(
              encode(std::span<const std::uint8_t>(img.pixels.data(), img.pixels.size()), dog));
        py::gil_scoped_release release;
        return train_unsupervised(waves, conv, seed);
      },
      py::arg("images"), py::arg("labels"), py::arg("dog"), py::arg("conv"), py::arg("seed"));
  m.def(
      "extract_features",
      [](const SpikeWave& wave, const ConvLayerState& state, const ConvConfig& config) {
        const std::vector<std::uint8_t> bits = extract_features(wave, state, config);
        U8Array arr(py::ssize_t(bits.size()));
        std::memcpy(arr.mutable_data(), bits.data(), bits.size());
        return arr;
      },
      py::arg("wave"), py::arg("state"), py::arg("config"));
  m.def("save_conv_weights", &save_conv_weights, py::arg("state"), py::arg("path"));
  m.def("load_conv_weights", &load_conv_weights, py::arg("path"));

  py::class_<FeatureCache>(m, "FeatureCache")
      .def(py::init<>())
      .def(py::init([](const U8Array& labels, const U8Array& bits) {
             const py::buffer_info bb = bits.request();
             if (bb.ndim != 2) throw std::invalid_argument("bits must have shape (N, dim)");
             FeatureCache cache;
             cache.dim = std::uint64_t(bb.shape[1]);
             cache.labels = to_u8_vector(labels);
             if (std::size_t(bb.shape[0]) != cache.labels.size())
               throw std::invalid_argument("bits and labels disagree on the item count");
             const auto* p = static_cast<const std::uint8_t*>(bb.ptr);
             cache.bits.assign(p, p + bb.shape[0] * bb.shape[1]);
             return cache;
           }),
           py::arg("labels"), py::arg("bits"))
      .def_readonly("dim", &FeatureCache::dim)
      .def("count", &FeatureCache::count)
      .def_property_readonly(
          "labels",
          [](const FeatureCache& c) {
            U8Array arr(py::ssize_t(c.labels.size()));
            std::memcpy(arr.mutable_data(), c.labels.data(), c.labels.size());
            return arr;
          })
      .def_property_readonly("bits", [](const FeatureCache& c) {
        U8Array arr({py::ssize_t(c.count()), py::ssize_t(c.dim)});
        std::memcpy(arr.mutable_data(), c.bits.data(), c.bits.size());
        return arr;
      });

  m.def("save_feature_cache", &save_feature_cache, py::arg("cache"), py::arg("path"));
  m.def("load_feature_cache", &load_feature_cache, py::arg("path"));
  m.def(
      "extract_split",
      [](const U8Array& images, const U8Array& labels, const DogConfig& dog,
         const ConvLayerState& state, const ConvConfig& conv) {
        const std::vector<LabeledImage> data = to_images(images, labels);
        py::gil_scoped_release release;
        return extract_split(data, dog, state, conv);
      },
      py::arg("images"), py::arg("labels"), py::arg("dog"), py::arg("state"), py::arg("conv"));

  py::class_<TaskIndexSet>(m, "TaskIndexSet")
      .def_readonly("task_index", &TaskIndexSet::task_index)
      .def_readonly("rows", &TaskIndexSet::rows)
      .def_readonly("allowed_labels", &TaskIndexSet::allowed_labels)
      .def_readonly("replay", &TaskIndexSet::replay);

  m.def(
      "build_task_indices",
      [](const U8Array& labels, int task_index, std::size_t n_items, std::uint64_t seed) {
        return build_task_indices(to_u8_vector(labels), task_index, n_items, seed);
      },
      py::arg("labels"), py::arg("task_index"), py::arg("n_items"), py::arg("seed"));
  m.def("build_replay_task_indices", &build_replay_task_indices, py::arg("tasks_so_far"),
        py::arg("current"), py::arg("fraction"), py::arg("seed"));
  m.def(
      "build_protocol_tasks",
      [](const FeatureCache& train, const ExperimentConfig& config) {
        return build_protocol_tasks(train.labels, config);
      },
      py::arg("train"), py::arg("config"));

  py::class_<HeadState>(m, "HeadState")
      .def_readwrite("theta", &HeadState::theta)
      .def_readwrite("hidden_bias", &HeadState::hidden_bias)
      .def_readwrite("out_weights", &HeadState::out_weights)
      .def_readwrite("out_bias", &HeadState::out_bias)
      .def_property_readonly(
          "activation", [](const HeadState& h) { return activation_name(h.activation); })
      .def("n_in", &HeadState::n_in)
      .def("n_hidden", &HeadState::n_hidden)
      .def("n_out", &HeadState::n_out);

  py::class_<ConsolidationState>(m, "ConsolidationState")
      .def_readonly("F", &ConsolidationState::F)
      .def_readonly("theta_hat", &ConsolidationState::theta_hat)
      .def_readonly("minibatch_count", &ConsolidationState::minibatch_count)
      .def_readonly("tasks_finalized", &ConsolidationState::tasks_finalized)
      .def_readonly("xi", &ConsolidationState::xi);

  py::class_<EvalResult>(m, "EvalResult")
      .def_readonly("accuracy", &EvalResult::accuracy)
      .def_readonly("n_items", &EvalResult::n_items)
      .def_readonly("per_class_correct", &EvalResult::per_class_correct)
      .def_readonly("per_class_total", &EvalResult::per_class_total)
      .def("subset_accuracy", [](const EvalResult& r, const std::vector<int>& digits) {
        return r.subset_accuracy(digits);
      });

  m.def("init_head", &init_head, py::arg("config"), py::arg("n_out"), py::arg("seed"));
  m.def("init_consolidation", &init_consolidation, py::arg("head"), py::arg("xi"));
  m.def(
      "forward",
      [](const HeadState& head, const U8Array& bits) {
        const py::buffer_info b = bits.request();
        if (b.ndim != 1 || b.shape[0] != head.n_in())
          throw std::invalid_argument("feature vector has the wrong length");
        Eigen::VectorXd x(head.n_in());
        const auto* p = static_cast<const std::uint8_t*>(b.ptr);
        for (int i = 0; i < head.n_in(); ++i) x(i) = double(p[i]);
        auto [hidden, probs] = forward(head, x);
        return py::make_tuple(std::move(hidden), std::move(probs));
      },
      py::arg("head"), py::arg("bits"));
  m.def("expand_output", &expand_output, py::arg("head"), py::arg("n_new"),
        py::arg("init_scale"), py::arg("seed"));
  m.def(
      "evaluate",
      [](const HeadState& head, const FeatureCache& data,
         const std::optional<std::vector<std::uint32_t>>& rows) {
        py::gil_scoped_release release;
        if (rows) return evaluate(head, data, *rows);
        return evaluate(head, data);
      },
      py::arg("head"), py::arg("data"), py::arg("rows") = std::nullopt);
  m.def("save_head_checkpoint", &save_head_checkpoint, py::arg("head"), py::arg("consol"),
        py::arg("path"));
  m.def("load_head_checkpoint", &load_head_checkpoint, py::arg("path"));

  py::class_<TaskOutcome>(m, "TaskOutcome")
      .def_readonly("task_index", &TaskOutcome::task_index)
      .def_readonly("n_outputs", &TaskOutcome::n_outputs)
      .def_readonly("n_train_items", &TaskOutcome::n_train_items)
      .def_readonly("n_minibatches", &TaskOutcome::n_minibatches)
      .def_readonly("full_test_accuracy", &TaskOutcome::full_test_accuracy)
      .def_readonly("seen_test_accuracy", &TaskOutcome::seen_test_accuracy)
      .def_readonly("pair_accuracy", &TaskOutcome::pair_accuracy);

  py::class_<RunRecord>(m, "RunRecord")
      .def_readonly("mode", &RunRecord::mode)
      .def_readonly("seed", &RunRecord::seed)
      .def_readonly("lambda_", &RunRecord::lambda)
      .def_readonly("tasks", &RunRecord::tasks)
      .def("final_task", &RunRecord::final_task, py::return_value_policy::copy);

  py::class_<SweepRow>(m, "SweepRow")
      .def_readonly("lambda_", &SweepRow::lambda)
      .def_readonly("mean_final_acc", &SweepRow::mean_final_acc)
      .def_readonly("std_final_acc", &SweepRow::std_final_acc)
      .def_readonly("max_final_acc", &SweepRow::max_final_acc)
      .def_readonly("n_seeds", &SweepRow::n_seeds);

  py::class_<SweepResult>(m, "SweepResult")
      .def_readonly("rows", &SweepResult::rows)
      .def_readonly("best_lambda", &SweepResult::best_lambda);

  m.def(
      "run_sequence",
      [](const FeatureCache& train, const std::vector<TaskIndexSet>& tasks,
         const FeatureCache& test, const ExperimentConfig& config, std::uint64_t seed,
         double lambda) {
        py::gil_scoped_release release;
        return run_sequence(train, tasks, test, config, seed, lambda);
      },
      py::arg("train"), py::arg("tasks"), py::arg("test"), py::arg("config"), py::arg("seed"),
      py::arg("lambda_"));
  m.def(
      "run_multi_seed",
      [](const FeatureCache& train, const std::vector<TaskIndexSet>& tasks,
         const FeatureCache& test, const ExperimentConfig& config, double lambda) {
        py::gil_scoped_release release;
        return run_multi_seed(train, tasks, test, config, lambda);
      },
      py::arg("train"), py::arg("tasks"), py::arg("test"), py::arg("config"),
      py::arg("lambda_"));
  m.def("default_lambda_grid", &default_lambda_grid);
  m.def(
      "sweep_lambda",
      [](const FeatureCache& train, const std::vector<TaskIndexSet>& tasks,
         const FeatureCache& validation, const ExperimentConfig& config,
         const std::vector<double>& grid) {
        py::gil_scoped_release release;
        return sweep_lambda(train, tasks, validation, config, grid);
      },
      py::arg("train"), py::arg("tasks"), py::arg("validation"), py::arg("config"),
      py::arg("grid"));
  m.def(
      "emit_report",
      [](const std::vector<RunRecord>& records, const std::string& out_dir,
         const std::string& config_echo, const std::optional<SweepResult>& sweep,
         const std::string& train_feature_hash, const std::string& eval_feature_hash) {
        ReportInputs inputs;
        inputs.records = records;
        inputs.sweep = sweep;
        inputs.config_echo = config_echo;
        inputs.train_feature_hash = train_feature_hash;
        inputs.eval_feature_hash = eval_feature_hash;
        emit_report(inputs, out_dir);
      },
      py::arg("records"), py::arg("out_dir"), py::arg("config_echo") = "",
      py::arg("sweep") = std::nullopt, py::arg("train_feature_hash") = "",
      py::arg("eval_feature_hash") = "");
}
