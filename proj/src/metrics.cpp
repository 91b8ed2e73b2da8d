#include "loco/metrics.hpp"

#include <cstdio>

namespace loco {
namespace {

std::string fmt(const std::optional<double>& v, const char* spec = "%.6f") {
  if (!v) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, *v);
  return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "class,iou,dsc,nsd\n";
  for (Index c = 0; c < r.classes(); ++c)
    out << c << ',' << fmt(r.iou_per_class[std::size_t(c)]) << ','
        << fmt(r.dsc_per_class[std::size_t(c)]) << ',' << fmt(r.nsd_per_class[std::size_t(c)])
        << '\n';
  out << "mean," << fmt(r.miou) << ',' << fmt(r.dsc) << ',' << fmt(r.nsd) << '\n';
}

void write_report_text(std::ostream& out, const EvalReport& r) {
  char line[128];
  out << "images: " << r.per_image_iou.size() << "  nsd tolerance: " << r.options.nsd_tolerance
      << " px  background in means: " << (r.options.include_background ? "yes" : "no") << '\n';
  out << "class        iou       dsc       nsd   present\n";
  for (Index c = 0; c < r.classes(); ++c) {
    const auto cell = [](const std::optional<double>& v) { return v ? fmt(v) : std::string("-"); };
    std::snprintf(line, sizeof line, "%5lld  %9s %9s %9s %9lld\n", static_cast<long long>(c),
                  cell(r.iou_per_class[std::size_t(c)]).c_str(),
                  cell(r.dsc_per_class[std::size_t(c)]).c_str(),
                  cell(r.nsd_per_class[std::size_t(c)]).c_str(),
                  static_cast<long long>(r.tallies[std::size_t(c)].images_present));
    out << line;
  }
  std::snprintf(line, sizeof line, "mean   %9.6f %9.6f %9.6f\n", r.miou, r.dsc, r.nsd);
  out << line;
}

}  // namespace loco
