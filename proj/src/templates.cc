#include "medground/templates.h"

#include "medground/error.h"

namespace medground::forge::templates {

std::string Fill(std::string_view tmpl, std::string_view value) {
  const auto pos = tmpl.find(kPlaceholder);
  if (pos == std::string_view::npos) {
    throw Error(ErrorKind::kInvalidArgument, "template has no placeholder");
  }
  std::string out(tmpl.substr(0, pos));
  out += value;
  out += tmpl.substr(pos + kPlaceholder.size());
  return out;
}

}  // namespace medground::forge::templates
