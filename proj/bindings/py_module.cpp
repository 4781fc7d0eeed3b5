#include <pybind11/pybind11.h>

namespace py = pybind11;

PYBIND11_MODULE(_avguide, m) {
  m.doc() = "audio-visual guided facial animation core";
  m.attr("__version__") = "0.1.0";
}
