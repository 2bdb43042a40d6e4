#include "plgf/context_embedding.hpp"

#include <algorithm>

namespace plgf {

namespace {
void check_index(const char* field, int value, int cardinality) {
    if (value < 0 || value >= cardinality)
        throw InputError(std::string(field) + " = " + std::to_string(value) + " outside [0, " +
                         std::to_string(cardinality) + ")");
}
}  // namespace

void ExternalFactors::validate() const {
    check_index("weather_class", weather_class, kWeatherClasses);
    check_index("day_of_week", day_of_week, kDaysOfWeek);
    check_index("hour_of_day", hour_of_day, kHoursOfDay);
    if (!std::isfinite(temperature_c) || !std::isfinite(wind_mph))
        throw InputError("continuous external factors must be finite");
}

ExternalFactors ExternalFactors::clamped() const {
    ExternalFactors f = *this;
    f.temperature_c = std::clamp(temperature_c, kTemperatureMin, kTemperatureMax);
    f.wind_mph = std::clamp(wind_mph, kWindMin, kWindMax);
    return f;
}

}  // namespace plgf
