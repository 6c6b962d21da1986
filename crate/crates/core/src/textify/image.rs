//! Image tag textification: visual-recognition JSON responses become rows of
//! the six-column table `imagename, classA, classB, classC, classD, color`.

use std::path::{Path, PathBuf};

use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::table::{ColumnSchema, RelationalTable, Value};
use crate::textify::text::empty_marker;

pub const IMAGE_COLUMNS: [&str; 6] = ["imagename", "classA", "classB", "classC", "classD", "color"];

/// Class token groups parsed from one or more `type_hierarchy` strings.
/// Each group holds unique tokens in first-seen order; an empty group is
/// rendered as its `_empty` marker.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HierarchyClasses {
    pub class_a: Vec<String>,
    pub class_b: Vec<String>,
    pub class_c: Vec<String>,
    pub class_d: Vec<String>,
}

impl HierarchyClasses {
    /// Space-joined groups with empty markers, in column order A..D.
    pub fn rendered(&self) -> [String; 4] {
        [
            render(&self.class_a, "classA"),
            render(&self.class_b, "classB"),
            render(&self.class_c, "classC"),
            render(&self.class_d, "classD"),
        ]
    }
}

fn render(group: &[String], column: &str) -> String {
    if group.is_empty() {
        empty_marker(column)
    } else {
        group.join(" ")
    }
}

fn push_unique(group: &mut Vec<String>, token: String) {
    if !group.contains(&token) {
        group.push(token);
    }
}

/// Lowercase, drop characters outside the token alphabet (and `/`), join
/// blanks with underscores.
fn hierarchy_token(piece: &str) -> String {
    let cleaned: String = piece
        .chars()
        .filter(char::is_ascii)
        .map(|c| c.to_ascii_lowercase())
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|&c| c == ' ' || matches!(c, 'a'..='z' | '0'..='9' | '_' | '.'))
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join("_")
}

/// First token -> classA, last -> classD, the one after classA -> classB,
/// anything else in between -> classC.
pub fn parse_type_hierarchy<S: AsRef<str>>(values: &[S]) -> Result<HierarchyClasses> {
    let mut out = HierarchyClasses::default();
    for raw in values {
        let raw = raw.as_ref();
        let tokens: Vec<String> = raw
            .split('/')
            .map(hierarchy_token)
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() < 2 {
            return Err(Error::MalformedHierarchy(raw.to_string()));
        }
        let last = tokens.len() - 1;
        push_unique(&mut out.class_a, tokens[0].clone());
        push_unique(&mut out.class_d, tokens[last].clone());
        if tokens.len() > 2 {
            push_unique(&mut out.class_b, tokens[1].clone());
            for t in &tokens[2..last] {
                push_unique(&mut out.class_c, t.clone());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTagRecord {
    pub imagename: String,
    pub class_a: String,
    pub class_b: String,
    pub class_c: String,
    pub class_d: String,
    pub color: String,
}

impl ImageTagRecord {
    pub fn fields(&self) -> [&str; 6] {
        [
            &self.imagename,
            &self.class_a,
            &self.class_b,
            &self.class_c,
            &self.class_d,
            &self.color,
        ]
    }
}

/// Locate the `classes` array: either at the top level or inside the
/// service envelope `images[0].classifiers[*].classes`.
fn collect_classes(response: &Json) -> Result<Vec<&Json>> {
    if let Some(classes) = response.get("classes") {
        return classes
            .as_array()
            .map(|a| a.iter().collect())
            .ok_or_else(|| Error::SchemaError("`classes` is not an array".into()));
    }
    let classifiers = response
        .get("images")
        .and_then(|i| i.get(0))
        .and_then(|i| i.get("classifiers"))
        .and_then(Json::as_array)
        .ok_or_else(|| Error::SchemaError("missing `classes` array".into()))?;
    let mut out = Vec::new();
    let mut found = false;
    for c in classifiers {
        if let Some(arr) = c.get("classes").and_then(Json::as_array) {
            found = true;
            out.extend(arr.iter());
        }
    }
    if !found {
        return Err(Error::SchemaError("missing `classes` array".into()));
    }
    Ok(out)
}

/// A class names a color when it ends in ` color` (the service's naming).
fn color_name(class: &str) -> Option<&str> {
    let trimmed = class.trim();
    let lower = trimmed.to_ascii_lowercase();
    lower
        .strip_suffix(" color")
        .map(|stem| &trimmed[..stem.len()])
}

pub fn textify_image_response(imagename: &str, response: &Json) -> Result<ImageTagRecord> {
    let classes = collect_classes(response)?;
    let mut hierarchies = Vec::new();
    let mut colors: Vec<String> = Vec::new();
    for class in classes {
        let name = class
            .get("class")
            .and_then(Json::as_str)
            .ok_or_else(|| Error::SchemaError("class entry without `class` name".into()))?;
        if let Some(h) = class.get("type_hierarchy").and_then(Json::as_str) {
            hierarchies.push(h.to_string());
        } else if let Some(color) = color_name(name) {
            let token = hierarchy_token(color);
            if !token.is_empty() {
                push_unique(&mut colors, token);
            }
        }
    }
    let [a, b, c, d] = parse_type_hierarchy(&hierarchies)?.rendered();
    Ok(ImageTagRecord {
        imagename: imagename.to_string(),
        class_a: a,
        class_b: b,
        class_c: c,
        class_d: d,
        color: render(&colors, "color"),
    })
}

/// Client for an image-tagging service. Implementations return the raw JSON
/// classification response for an image.
pub trait ImageTagClient {
    fn classify(&self, imagename: &str) -> Result<Json>;

    /// Images this client can serve, in a stable order.
    fn list_images(&self) -> Result<Vec<String>>;
}

/// Offline transport: one `<imagename>.json` response file per image.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl ImageTagClient for FixtureTransport {
    fn classify(&self, imagename: &str) -> Result<Json> {
        let path = self.dir.join(format!("{imagename}.json"));
        let text = std::fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn list_images(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }
}

pub fn image_table_schema() -> Vec<ColumnSchema> {
    IMAGE_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            if i == 0 {
                ColumnSchema::key(*name)
            } else {
                ColumnSchema::text(*name)
            }
        })
        .collect()
}

pub fn image_records_to_table(name: &str, records: &[ImageTagRecord]) -> Result<RelationalTable> {
    let rows = records
        .iter()
        .map(|r| {
            r.fields()
                .iter()
                .map(|f| Value::Text(f.to_string()))
                .collect()
        })
        .collect();
    RelationalTable::new(name, image_table_schema(), rows)
}

/// Classify every image the client knows about and build the tag table.
pub fn build_image_table(name: &str, client: &dyn ImageTagClient) -> Result<RelationalTable> {
    let mut records = Vec::new();
    for image in client.list_images()? {
        let response = client.classify(&image)?;
        records.push(textify_image_response(&image, &response)?);
    }
    image_records_to_table(name, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn two_token_hierarchy() {
        let h = parse_type_hierarchy(&["/domestic animal/mastiff dog"]).unwrap();
        assert_eq!(
            h.rendered(),
            [
                "domestic_animal",
                "classb_empty",
                "classc_empty",
                "mastiff_dog"
            ]
        );
    }

    #[test]
    fn merged_hierarchies_keep_unique_tokens() {
        let h = parse_type_hierarchy(&[
            "/animal/mammal/carnivore/feline/big cat/lion",
            "/animal/predator",
        ])
        .unwrap();
        assert_eq!(
            h.rendered(),
            [
                "animal",
                "mammal",
                "carnivore feline big_cat",
                "lion predator"
            ]
        );
    }

    #[test]
    fn short_hierarchy_is_malformed() {
        assert!(matches!(
            parse_type_hierarchy(&["/animal"]),
            Err(Error::MalformedHierarchy(_))
        ));
        assert!(matches!(
            parse_type_hierarchy(&["//"]),
            Err(Error::MalformedHierarchy(_))
        ));
    }

    #[test]
    fn response_without_hierarchies_gives_markers() {
        let r = json!({"classes": [{"class": "azure color", "score": 0.7}]});
        let rec = textify_image_response("img", &r).unwrap();
        assert_eq!(rec.class_a, "classa_empty");
        assert_eq!(rec.class_d, "classd_empty");
        assert_eq!(rec.color, "azure");
    }

    #[test]
    fn envelope_form_and_multiple_colors() {
        let r = json!({"images": [{"image": "x.jpg", "classifiers": [{"classes": [
            {"class": "giant tortoise", "type_hierarchy": "/animal/reptile/turtle/giant tortoise"},
            {"class": "sea green color"},
            {"class": "green color"}
        ]}]}]});
        let rec = textify_image_response("n01323781_5780", &r).unwrap();
        assert_eq!(rec.color, "sea_green green");
        assert_eq!(rec.class_c, "turtle");
    }

    #[test]
    fn missing_classes_is_schema_error() {
        let err = textify_image_response("img", &json!({"foo": 1})).unwrap_err();
        assert!(matches!(err, Error::SchemaError(_)));
    }
}
