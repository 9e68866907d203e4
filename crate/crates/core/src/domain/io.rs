use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{
    BodyCompositionSample, Cohort, ConsumedFraction, FoodCompositionEntry, Meal, MealItem,
    MealRecord, MonthlyAssessment, Sex, SubjectId, SubjectProfile, TrialPeriod,
};
use crate::error::{Error, Result};

const DATE_FMT: &str = "%Y-%m-%d";
const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S";

/// File names of the cohort tables inside a data directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSchema {
    pub profiles: String,
    pub periods: String,
    pub meals: String,
    pub foods: String,
    pub bodycomp: String,
    pub assessments: String,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            profiles: "profiles.csv".into(),
            periods: "periods.csv".into(),
            meals: "meals.csv".into(),
            foods: "foods.csv".into(),
            bodycomp: "bodycomp.csv".into(),
            assessments: "assessments.csv".into(),
        }
    }
}

const PROFILES_HEADER: [&str; 7] = [
    "subject_id",
    "sex",
    "age",
    "physical_activity",
    "mmse",
    "comorbidities",
    "therapies",
];
const PERIODS_HEADER: [&str; 3] = ["period_id", "start_date", "weeks"];
const MEALS_HEADER: [&str; 4] = ["subject_id", "date", "meal", "items"];
const FOODS_HEADER: [&str; 6] = [
    "food_id",
    "nominal_portion_g",
    "cereals",
    "animal_proteins",
    "vegetables",
    "fruit",
];
const BODY_HEADER: [&str; 6] = ["subject_id", "timestamp", "fmi", "bmi", "bmr", "body_water_pct"];
const ASSESS_HEADER: [&str; 4] = ["subject_id", "month_end_date", "mna_score", "label"];

/// Row counts per ingested table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub profiles: usize,
    pub periods: usize,
    pub meals: usize,
    pub foods: usize,
    pub bodycomp: usize,
    pub assessments: usize,
}

struct Table {
    name: String,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::ingest(&self.name, line, msg)
    }
}

fn read_table(dir: &Path, file: &str, header: &[&str], required: bool) -> Result<Table> {
    let path: PathBuf = dir.join(file);
    if !path.exists() && !required {
        return Ok(Table { name: file.to_string(), rows: Vec::new() });
    }
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::ingest(
            file,
            1,
            format!("expected header {:?}, found {:?}", header, got),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let rec = rec.map_err(|e| Error::ingest(file, line, e.to_string()))?;
        rows.push((line, rec));
    }
    Ok(Table { name: file.to_string(), rows })
}

fn field<T: std::str::FromStr>(t: &Table, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| t.err(line, format!("cannot parse {name} from {:?}", rec.get(i).unwrap_or(""))))
}

fn date_field(t: &Table, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<NaiveDate> {
    let raw = rec.get(i).unwrap_or("");
    NaiveDate::parse_from_str(raw, DATE_FMT)
        .map_err(|_| t.err(line, format!("{name} {raw:?} is not an ISO-8601 date")))
}

fn parse_items(t: &Table, line: usize, raw: &str) -> Result<Vec<MealItem>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(';')
        .map(|part| {
            let (food, frac) = part
                .split_once(':')
                .ok_or_else(|| t.err(line, format!("meal item {part:?} is not food_id:fraction")))?;
            let v: f64 = frac
                .trim()
                .parse()
                .map_err(|_| t.err(line, format!("cannot parse consumed fraction {frac:?}")))?;
            let fraction = ConsumedFraction::try_from(v).map_err(|m| t.err(line, m))?;
            Ok(MealItem { food_id: food.trim().to_string(), fraction })
        })
        .collect()
}

fn format_items(items: &[MealItem]) -> String {
    items
        .iter()
        .map(|it| format!("{}:{}", it.food_id, it.fraction.value()))
        .collect::<Vec<_>>()
        .join(";")
}

/// Reads and cross-references the cohort tables in `dir`.
///
/// `bodycomp.csv` may be absent (no subject weighed); every other table is required.
pub fn ingest_cohort(dir: &Path, schema: &IngestSchema) -> Result<(Cohort, IngestSummary)> {
    let t = read_table(dir, &schema.profiles, &PROFILES_HEADER, true)?;
    let mut profiles = Vec::new();
    let mut subjects = HashSet::new();
    for (line, r) in &t.rows {
        let line = *line;
        let sex = match r.get(1).unwrap_or("") {
            "F" => Sex::F,
            "M" => Sex::M,
            other => return Err(t.err(line, format!("sex {other:?} must be F or M"))),
        };
        let physical_activity = match r.get(3).unwrap_or("") {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(t.err(line, format!("physical_activity {other:?} must be 0 or 1"))),
        };
        let p = SubjectProfile {
            subject_id: SubjectId::new(r.get(0).unwrap_or("")),
            sex,
            age: field(&t, line, r, 2, "age")?,
            physical_activity,
            mmse: field(&t, line, r, 4, "mmse")?,
            comorbidities: field(&t, line, r, 5, "comorbidities")?,
            therapies: field(&t, line, r, 6, "therapies")?,
        };
        p.check().map_err(|m| t.err(line, m))?;
        if !subjects.insert(p.subject_id.clone()) {
            return Err(t.err(line, format!("duplicate subject_id {}", p.subject_id)));
        }
        profiles.push(p);
    }
    let resolve = |t: &Table, line: usize, id: &str| -> Result<SubjectId> {
        let id = SubjectId::new(id);
        if subjects.contains(&id) {
            Ok(id)
        } else {
            Err(t.err(line, format!("subject_id {id} has no profile")))
        }
    };

    let t = read_table(dir, &schema.periods, &PERIODS_HEADER, true)?;
    let mut periods = Vec::new();
    for (line, r) in &t.rows {
        periods.push(TrialPeriod {
            period_id: r.get(0).unwrap_or("").to_string(),
            start: date_field(&t, *line, r, 1, "start_date")?,
            weeks: field(&t, *line, r, 2, "weeks")?,
        });
    }

    let t = read_table(dir, &schema.foods, &FOODS_HEADER, true)?;
    let mut foods = Vec::new();
    for (line, r) in &t.rows {
        let line = *line;
        let f = FoodCompositionEntry {
            food_id: r.get(0).unwrap_or("").to_string(),
            nominal_portion_g: field(&t, line, r, 1, "nominal_portion_g")?,
            composition: [
                field(&t, line, r, 2, "cereals")?,
                field(&t, line, r, 3, "animal_proteins")?,
                field(&t, line, r, 4, "vegetables")?,
                field(&t, line, r, 5, "fruit")?,
            ],
        };
        f.check().map_err(|m| t.err(line, m))?;
        foods.push(f);
    }

    let t = read_table(dir, &schema.meals, &MEALS_HEADER, true)?;
    let mut meals = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, r) in &t.rows {
        let line = *line;
        let subject_id = resolve(&t, line, r.get(0).unwrap_or(""))?;
        let date = date_field(&t, line, r, 1, "date")?;
        let meal = Meal::parse(r.get(2).unwrap_or(""))
            .ok_or_else(|| t.err(line, "meal must be lunch or dinner"))?;
        if !seen.insert((subject_id.clone(), date, meal)) {
            return Err(t.err(
                line,
                format!("duplicate meal record ({subject_id}, {date}, {})", meal.as_str()),
            ));
        }
        let items = parse_items(&t, line, r.get(3).unwrap_or(""))?;
        meals.push(MealRecord { subject_id, date, meal, items });
    }

    let t = read_table(dir, &schema.bodycomp, &BODY_HEADER, false)?;
    let mut body = Vec::new();
    for (line, r) in &t.rows {
        let line = *line;
        let raw_ts = r.get(1).unwrap_or("");
        let timestamp = NaiveDateTime::parse_from_str(raw_ts, TIMESTAMP_FMT)
            .map_err(|_| t.err(line, format!("timestamp {raw_ts:?} is not ISO-8601")))?;
        let s = BodyCompositionSample {
            subject_id: resolve(&t, line, r.get(0).unwrap_or(""))?,
            timestamp,
            fmi: field(&t, line, r, 2, "fmi")?,
            bmi: field(&t, line, r, 3, "bmi")?,
            bmr: field(&t, line, r, 4, "bmr")?,
            body_water_pct: field(&t, line, r, 5, "body_water_pct")?,
        };
        s.check().map_err(|m| t.err(line, m))?;
        body.push(s);
    }

    let t = read_table(dir, &schema.assessments, &ASSESS_HEADER, true)?;
    let mut assessments = Vec::new();
    for (line, r) in &t.rows {
        let line = *line;
        let a = MonthlyAssessment {
            subject_id: resolve(&t, line, r.get(0).unwrap_or(""))?,
            month_end_date: date_field(&t, line, r, 1, "month_end_date")?,
            mna_score: field(&t, line, r, 2, "mna_score")?,
        };
        a.check().map_err(|m| t.err(line, m))?;
        let label = r.get(3).unwrap_or("");
        if !label.is_empty() && label != a.label().as_str() {
            return Err(t.err(
                line,
                format!("label {label:?} disagrees with MNA score {}", a.mna_score),
            ));
        }
        assessments.push(a);
    }

    let summary = IngestSummary {
        profiles: profiles.len(),
        periods: periods.len(),
        meals: meals.len(),
        foods: foods.len(),
        bodycomp: body.len(),
        assessments: assessments.len(),
    };
    let cohort = Cohort::new(profiles, meals, foods, body, assessments, periods)?;
    Ok((cohort, summary))
}

fn writer(dir: &Path, file: &str, header: &[&str]) -> Result<csv::Writer<File>> {
    let path = dir.join(file);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    Ok(w)
}

/// Writes the cohort as the CSV tables read by [`ingest_cohort`].
pub fn write_cohort(cohort: &Cohort, dir: &Path, schema: &IngestSchema) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut w = writer(dir, &schema.profiles, &PROFILES_HEADER)?;
    for p in cohort.profiles() {
        w.write_record([
            p.subject_id.as_str().to_string(),
            p.sex.as_str().to_string(),
            p.age.to_string(),
            u8::from(p.physical_activity).to_string(),
            p.mmse.to_string(),
            p.comorbidities.to_string(),
            p.therapies.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(&schema.profiles), e))?;

    let mut w = writer(dir, &schema.periods, &PERIODS_HEADER)?;
    for p in cohort.periods() {
        w.write_record([
            p.period_id.clone(),
            p.start.format(DATE_FMT).to_string(),
            p.weeks.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(&schema.periods), e))?;

    let mut w = writer(dir, &schema.foods, &FOODS_HEADER)?;
    for f in cohort.foods().values() {
        let mut rec = vec![f.food_id.clone(), f.nominal_portion_g.to_string()];
        rec.extend(f.composition.iter().map(|c| c.to_string()));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join(&schema.foods), e))?;

    let mut w = writer(dir, &schema.meals, &MEALS_HEADER)?;
    for m in cohort.meals() {
        w.write_record([
            m.subject_id.as_str().to_string(),
            m.date.format(DATE_FMT).to_string(),
            m.meal.as_str().to_string(),
            format_items(&m.items),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(&schema.meals), e))?;

    let mut w = writer(dir, &schema.bodycomp, &BODY_HEADER)?;
    for b in cohort.body_samples() {
        w.write_record([
            b.subject_id.as_str().to_string(),
            b.timestamp.format(TIMESTAMP_FMT).to_string(),
            b.fmi.to_string(),
            b.bmi.to_string(),
            b.bmr.to_string(),
            b.body_water_pct.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(&schema.bodycomp), e))?;

    let mut w = writer(dir, &schema.assessments, &ASSESS_HEADER)?;
    for a in cohort.assessments() {
        w.write_record([
            a.subject_id.as_str().to_string(),
            a.month_end_date.format(DATE_FMT).to_string(),
            a.mna_score.to_string(),
            a.label().as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(&schema.assessments), e))?;
    Ok(())
}
