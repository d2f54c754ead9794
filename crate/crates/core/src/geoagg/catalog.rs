//! Machine-readable list of the population indicators per spatial region.

use serde::Serialize;

use crate::location::PoiCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Resident,
    Visitor,
    Vote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    Acc,
    Loc,
    Gis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    PhysicalActivity,
    Visits,
    Mobility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Average,
    Distribution,
    /// Share of individuals (or votes) for which a 0/1 flag holds.
    Share,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndicatorSpec {
    /// Output key; distributions expand to `<id>.<class>`.
    pub id: &'static str,
    pub label: &'static str,
    pub group: Group,
    pub statistic: Statistic,
    pub axes: &'static [Axis],
    pub sensors: &'static [Sensor],
}

impl IndicatorSpec {
    pub fn computable(&self, available: &[Sensor]) -> bool {
        self.sensors.iter().all(|s| available.contains(s))
    }
}

/// Named groups of place categories used by the visit indicators.
pub fn category_group(name: &str) -> Option<&'static [PoiCategory]> {
    use PoiCategory::*;
    Some(match name {
        "food_related" => &[Restaurant, FoodOutlet, Cafe, FastFood, Takeaway, SupermarketGrocery, Bar, WineLiquor],
        "restaurant" => &[Restaurant],
        "food_outlet" => &[FoodOutlet],
        "cafe" => &[Cafe],
        "fast_food" => &[FastFood],
        "supermarket_grocery" => &[SupermarketGrocery],
        "restaurant_or_food_outlet" => &[Restaurant, FoodOutlet],
        "takeaway" => &[Takeaway],
        "fast_food_or_takeaway" => &[FastFood, Takeaway],
        "bar" => &[Bar],
        "wine_liquor" => &[WineLiquor],
        "park" => &[Park],
        "recreation_indoor" => &[RecreationIndoor],
        "sports_facility" => &[SportsFacility],
        _ => return None,
    })
}

/// Groups behind the per-vote visit flags.
pub const VOTE_VISIT_GROUPS: [&str; 6] =
    ["food_related", "supermarket_grocery", "fast_food_or_takeaway", "park", "recreation_indoor", "sports_facility"];

/// Groups behind the resident visit frequencies.
pub const RESIDENT_VISIT_GROUPS: [&str; 14] = [
    "restaurant",
    "food_outlet",
    "cafe",
    "fast_food",
    "food_related",
    "supermarket_grocery",
    "restaurant_or_food_outlet",
    "takeaway",
    "fast_food_or_takeaway",
    "bar",
    "wine_liquor",
    "park",
    "recreation_indoor",
    "sports_facility",
];

const VV: &[Axis] = &[Axis::Visitor, Axis::Vote];
const R: &[Axis] = &[Axis::Resident];
const V: &[Axis] = &[Axis::Vote];
const ALL: &[Axis] = &[Axis::Resident, Axis::Visitor, Axis::Vote];
const ACC: &[Sensor] = &[Sensor::Acc];
const ACC_LOC: &[Sensor] = &[Sensor::Acc, Sensor::Loc];
const LOC_GIS: &[Sensor] = &[Sensor::Loc, Sensor::Gis];

macro_rules! spec {
    ($id:literal, $label:literal, $group:ident, $stat:ident, $axes:expr, $sensors:expr) => {
        IndicatorSpec {
            id: $id,
            label: $label,
            group: Group::$group,
            statistic: Statistic::$stat,
            axes: $axes,
            sensors: $sensors,
        }
    };
}

const CATALOG: [IndicatorSpec; 31] = [
    spec!("counts_per_minute", "average activity counts per minute", PhysicalActivity, Average, VV, ACC),
    spec!("steps_per_hour", "average hourly steps", PhysicalActivity, Average, VV, ACC),
    spec!("daily_steps", "average daily steps", PhysicalActivity, Average, R, ACC),
    spec!("sedentary_min_after_school", "average sedentary minutes after school", PhysicalActivity, Average, R, ACC_LOC),
    spec!("sleep_duration_min", "average sleep duration", PhysicalActivity, Average, R, ACC),
    spec!("type_frac", "distribution of physical activity types", PhysicalActivity, Distribution, R, ACC),
    spec!("level_frac", "distribution of physical activity levels", PhysicalActivity, Distribution, VV, ACC),
    spec!("sedentary_behavior", "share of individuals with sedentary behavior", PhysicalActivity, Share, VV, ACC),
    spec!("sedentary_average_level", "share of individuals with a sedentary average activity level", PhysicalActivity, Share, R, ACC),
    spec!("walking_60min", "share of individuals with at least 60 min of average daily walking", PhysicalActivity, Share, R, ACC),
    spec!("visit.food_related", "share of votes with a visit to a food-related location", Visits, Share, V, LOC_GIS),
    spec!("visit.supermarket_grocery", "share of votes with a visit to a supermarket or grocery", Visits, Share, V, LOC_GIS),
    spec!("visit.fast_food_or_takeaway", "share of votes with a visit to fast food or take-away", Visits, Share, V, LOC_GIS),
    spec!("visit.park", "share of votes with a visit to a public park", Visits, Share, V, LOC_GIS),
    spec!("visit.recreation_indoor", "share of votes with a visit to a recreational facility", Visits, Share, V, LOC_GIS),
    spec!("visit.sports_facility", "share of votes with a visit to an athletics or sports facility", Visits, Share, V, LOC_GIS),
    spec!("weekly_visits.restaurant", "average weekly visits to restaurants", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.food_outlet", "average weekly visits to food outlets", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.cafe", "average weekly visits to cafes", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.fast_food", "average weekly visits to fast food", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.food_related", "average weekly visits to food-related locations", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.supermarket_grocery", "average weekly visits to supermarkets or groceries", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.restaurant_or_food_outlet", "average weekly visits to restaurants or food outlets", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.takeaway", "average weekly visits to take-away", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.fast_food_or_takeaway", "average weekly visits to fast food or take-away", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.bar", "average weekly visits to bars", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.wine_liquor", "average weekly visits to wine or liquor stores", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.park", "average weekly visits to public parks", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.recreation_indoor", "average visits to indoor recreational facilities", Visits, Average, R, LOC_GIS),
    spec!("weekly_visits.sports_facility", "average visits to athletics or sports facilities", Visits, Average, R, LOC_GIS),
    spec!("mode_frac", "distribution of transportation modes", Mobility, Distribution, ALL, ACC),
];

pub fn indicator_catalog() -> &'static [IndicatorSpec] {
    &CATALOG
}

pub fn lookup(id: &str) -> Option<&'static IndicatorSpec> {
    CATALOG.iter().find(|s| s.id == id)
}
