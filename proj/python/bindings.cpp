#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "o2rnet/commands.hpp"

namespace py = pybind11;
using namespace o2r;

namespace {

using BoxTuple = std::array<double, 4>;

Box to_box(const BoxTuple& t) { return {t[0], t[1], t[2], t[3]}; }
BoxTuple from_box(const Box& b) { return {b.x1, b.y1, b.x2, b.y2}; }

std::vector<Box> to_boxes(const std::vector<BoxTuple>& ts) {
  std::vector<Box> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(to_box(t));
  return out;
}

std::vector<BoxTuple> from_boxes(const std::vector<Box>& bs) {
  std::vector<BoxTuple> out;
  out.reserve(bs.size());
  for (const auto& b : bs) out.push_back(from_box(b));
  return out;
}

Image to_image(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("image must be an HxWx3 uint8 array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<std::uint8_t> from_image(const Image& img) {
  py::array_t<std::uint8_t> a({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

py::dict scene_dict(const ImageRecord& r) {
  py::dict d;
  d["image_id"] = r.image_id;
  d["image"] = from_image(r.image);
  d["boxes"] = from_boxes(r.annotation.boxes);
  d["occluded"] = r.annotation.occluded;
  return d;
}

py::dict summary_dict(const EvalSummary& s) {
  return py::module_::import("json").attr("loads")(summary_to_json(s).dump());
}

RunConfig config_from(const std::string& preset, const std::string& json_overrides) {
  RunConfig c = make_preset(preset);
  if (!json_overrides.empty()) c = run_config_from_json(nlohmann::json::parse(json_overrides), c);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_o2rnet, m) {
  m.doc() = "Occluder-occludee relational detector for apples";

  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return iou(to_box(a), to_box(b)); });
  m.def(
      "nms",
      [](const std::vector<BoxTuple>& boxes, const std::vector<double>& scores, double threshold) {
        return nms_indices(to_boxes(boxes), scores, threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("threshold"));
  m.def(
      "fes_expand",
      [](const BoxTuple& box, int steps, int width, int height, double step_frac) {
        FesConfig cfg;
        cfg.steps = steps;
        cfg.step_frac = step_frac;
        return from_boxes(fes_expand(to_box(box), cfg, {width, height}));
      },
      py::arg("box"), py::arg("steps"), py::arg("width"), py::arg("height"), py::arg("step_frac") = FesConfig{}.step_frac);
  m.def("occlusion_labels", [](const std::vector<BoxTuple>& boxes, double tau) {
    return label_occlusion_cases(to_boxes(boxes), tau);
  }, py::arg("boxes"), py::arg("tau") = kDefaultOcclusionTau);

  m.def("preset_names", &preset_names);
  m.def(
      "config_json",
      [](const std::string& preset, const std::string& overrides) { return to_json(config_from(preset, overrides)).dump(); },
      py::arg("preset") = "desk", py::arg("overrides") = "");

  m.def(
      "synthetic_scene",
      [](std::uint64_t index, const std::string& preset, const std::string& overrides) {
        return scene_dict(generate_synthetic_scene(config_from(preset, overrides).synth.scene, index));
      },
      py::arg("index"), py::arg("preset") = "desk", py::arg("overrides") = "");

  m.def(
      "evaluate",
      [](const std::map<std::string, std::vector<BoxTuple>>& gt,
         const std::vector<std::tuple<std::string, BoxTuple, double>>& dets) {
        std::vector<EvalImage> images;
        for (const auto& [id, boxes] : gt) {
          EvalImage im{id, to_boxes(boxes), {}};
          im.labels.assign(im.boxes.size(), kAppleLabel);
          images.push_back(std::move(im));
        }
        std::vector<EvalDetection> ed;
        for (const auto& [id, b, s] : dets) ed.push_back({id, to_box(b), s, kAppleLabel});
        return summary_dict(coco_summary(ed, images));
      },
      py::arg("ground_truth"), py::arg("detections"));

  py::class_<O2RNet>(m, "Model")
      .def(py::init([](const std::string& preset, const std::string& overrides) {
             return O2RNet(config_from(preset, overrides).train.model);
           }),
           py::arg("preset") = "desk", py::arg("overrides") = "")
      .def_static("load", [](const fs::path& p) { return model_from_checkpoint(p); })
      .def("num_parameters",
           [](O2RNet& self) {
             std::size_t n = 0;
             for (const Param* p : self.parameters()) n += static_cast<std::size_t>(p->size());
             return n;
           })
      .def(
          "detect",
          [](const O2RNet& self, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& image,
             double score_threshold, const std::string& mode) {
            DetectParams p;
            p.score_threshold = score_threshold;
            p.mode = parse_output_mode(mode);
            const Image img = to_image(image);
            std::vector<Detection> dets;
            {
              py::gil_scoped_release release;
              dets = detect(self, img, p);
            }
            py::list out;
            for (const auto& d : dets) {
              py::dict e;
              e["box"] = from_box(d.box);
              e["score"] = d.score;
              e["branch"] = std::string(branch_name(d.branch));
              e["expansion_index"] = d.expansion_index;
              out.append(e);
            }
            return out;
          },
          py::arg("image"), py::arg("score_threshold") = 0.5, py::arg("mode") = "union");

  m.def(
      "synth",
      [](const fs::path& out, const std::string& preset, const std::string& overrides) {
        std::ostringstream log;
        return cmd_synth(config_from(preset, overrides), out, log);
      },
      py::arg("out"), py::arg("preset") = "desk", py::arg("overrides") = "");
  m.def(
      "train",
      [](const fs::path& run_dir, const std::string& preset, const std::string& overrides) {
        std::ostringstream log;
        TrainOutcome o;
        {
          py::gil_scoped_release release;
          o = cmd_train(config_from(preset, overrides), run_dir, false, log);
        }
        return o.final_checkpoint;
      },
      py::arg("run_dir"), py::arg("preset") = "desk", py::arg("overrides") = "");
}
