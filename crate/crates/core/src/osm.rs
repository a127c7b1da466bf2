//! OpenStreetMap guided sampling of man-made scenes.
//!
//! Reads the XML subset `osm / node / way / relation / nd / member / tag`,
//! maps tag values to scene categories through an editable rule table and
//! turns element geometry into pixel windows.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_raster::{GeoRaster, Rect};
use crate::taxonomy::{Sample, SceneCategory, SourceKind};

pub type Tags = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct OsmNode {
    pub lon: f64,
    pub lat: f64,
    pub tags: Tags,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmWay {
    pub node_refs: Vec<i64>,
    pub tags: Tags,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    Node,
    Way,
    Relation,
}

impl MemberKind {
    fn as_str(self) -> &'static str {
        match self {
            MemberKind::Node => "node",
            MemberKind::Way => "way",
            MemberKind::Relation => "relation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmMember {
    pub kind: MemberKind,
    pub reference: i64,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmRelation {
    pub members: Vec<OsmMember>,
    pub tags: Tags,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsmDocument {
    pub nodes: BTreeMap<i64, OsmNode>,
    pub ways: BTreeMap<i64, OsmWay>,
    pub relations: BTreeMap<i64, OsmRelation>,
    /// Earliest and latest element timestamps, when any are present.
    pub timestamp_range: Option<(String, String)>,
    /// Ways dropped because they referenced nodes missing from the document.
    pub skipped_ways: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementRef {
    Node(i64),
    Way(i64),
    Relation(i64),
}

enum Open {
    Node(i64, OsmNode),
    Way(i64, OsmWay),
    Relation(i64, OsmRelation),
}

fn attrs(e: &BytesStart<'_>, position: u64) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| Error::MalformedXml {
            position,
            reason: err.to_string(),
        })?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a
            .unescape_value()
            .map_err(|err| Error::MalformedXml {
                position,
                reason: err.to_string(),
            })?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn required<T: std::str::FromStr>(a: &BTreeMap<String, String>, key: &str, element: &str, position: u64) -> Result<T> {
    a.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::MalformedXml {
            position,
            reason: format!("<{element}> needs a valid {key:?} attribute"),
        })
}

/// Parses an OSM XML document. Unknown elements are ignored.
pub fn parse_osm(text: &str) -> Result<OsmDocument> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut doc = OsmDocument::default();
    let mut open: Option<Open> = None;
    let mut stack: Vec<String> = Vec::new();
    let mut saw_root = false;

    loop {
        let position = reader.buffer_position();
        let event = reader.read_event().map_err(|err| Error::MalformedXml {
            position: reader.error_position(),
            reason: err.to_string(),
        })?;
        let (e, is_empty) = match &event {
            Event::Start(e) => (e, false),
            Event::Empty(e) => (e, true),
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                stack.pop();
                if matches!(name.as_str(), "node" | "way" | "relation") {
                    finish(&mut doc, open.take(), position)?;
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        let a = attrs(e, position)?;
        match name.as_str() {
            "osm" => {
                saw_root = true;
                if let Some(v) = a.get("version") {
                    if v != "0.6" {
                        return Err(Error::UnsupportedVersion(v.clone()));
                    }
                }
            }
            "node" | "way" | "relation" => {
                if open.is_some() {
                    return Err(Error::MalformedXml {
                        position,
                        reason: format!("<{name}> nested inside another element"),
                    });
                }
                let id: i64 = required(&a, "id", &name, position)?;
                let timestamp = a.get("timestamp").cloned();
                open = Some(match name.as_str() {
                    "node" => Open::Node(
                        id,
                        OsmNode {
                            lon: required(&a, "lon", "node", position)?,
                            lat: required(&a, "lat", "node", position)?,
                            tags: Tags::new(),
                            timestamp,
                        },
                    ),
                    "way" => Open::Way(
                        id,
                        OsmWay {
                            node_refs: Vec::new(),
                            tags: Tags::new(),
                            timestamp,
                        },
                    ),
                    _ => Open::Relation(
                        id,
                        OsmRelation {
                            members: Vec::new(),
                            tags: Tags::new(),
                            timestamp,
                        },
                    ),
                });
                if is_empty {
                    finish(&mut doc, open.take(), position)?;
                }
            }
            "tag" => {
                let k: String = required(&a, "k", "tag", position)?;
                let v: String = required(&a, "v", "tag", position)?;
                match open.as_mut() {
                    Some(Open::Node(_, n)) => n.tags.insert(k, v),
                    Some(Open::Way(_, w)) => w.tags.insert(k, v),
                    Some(Open::Relation(_, r)) => r.tags.insert(k, v),
                    None => None,
                };
            }
            "nd" => {
                if let Some(Open::Way(_, w)) = open.as_mut() {
                    w.node_refs.push(required(&a, "ref", "nd", position)?);
                }
            }
            "member" => {
                if let Some(Open::Relation(_, r)) = open.as_mut() {
                    let kind = match a.get("type").map(String::as_str) {
                        Some("node") => MemberKind::Node,
                        Some("way") => MemberKind::Way,
                        Some("relation") => MemberKind::Relation,
                        other => {
                            return Err(Error::MalformedXml {
                                position,
                                reason: format!("unknown member type {other:?}"),
                            })
                        }
                    };
                    r.members.push(OsmMember {
                        kind,
                        reference: required(&a, "ref", "member", position)?,
                        role: a.get("role").cloned().unwrap_or_default(),
                    });
                }
            }
            _ => {}
        }
        if !is_empty {
            stack.push(name);
        }
    }
    if let Some(name) = stack.last() {
        return Err(Error::MalformedXml {
            position: text.len() as u64,
            reason: format!("unclosed <{name}>"),
        });
    }
    if !saw_root {
        return Err(Error::MalformedXml {
            position: 0,
            reason: "missing <osm> root".into(),
        });
    }

    let missing: Vec<i64> = doc
        .ways
        .iter()
        .filter(|(_, w)| w.node_refs.iter().any(|r| !doc.nodes.contains_key(r)))
        .map(|(id, _)| *id)
        .collect();
    doc.skipped_ways = missing.len();
    for id in missing {
        doc.ways.remove(&id);
    }
    doc.timestamp_range = timestamp_range(&doc);
    Ok(doc)
}

fn finish(doc: &mut OsmDocument, open: Option<Open>, position: u64) -> Result<()> {
    let duplicate = |kind: &str, id: i64| Error::MalformedXml {
        position,
        reason: format!("duplicate {kind} id {id}"),
    };
    match open {
        Some(Open::Node(id, n)) => {
            if doc.nodes.insert(id, n).is_some() {
                return Err(duplicate("node", id));
            }
        }
        Some(Open::Way(id, w)) => {
            if doc.ways.insert(id, w).is_some() {
                return Err(duplicate("way", id));
            }
        }
        Some(Open::Relation(id, r)) => {
            if doc.relations.insert(id, r).is_some() {
                return Err(duplicate("relation", id));
            }
        }
        None => {}
    }
    Ok(())
}

fn timestamp_range(doc: &OsmDocument) -> Option<(String, String)> {
    let stamps: BTreeSet<&String> = doc
        .nodes
        .values()
        .filter_map(|n| n.timestamp.as_ref())
        .chain(doc.ways.values().filter_map(|w| w.timestamp.as_ref()))
        .chain(doc.relations.values().filter_map(|r| r.timestamp.as_ref()))
        .collect();
    Some(((*stamps.first()?).clone(), (*stamps.last()?).clone()))
}

fn escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

fn write_open(out: &mut String, element: &str, id: i64, extra: &str, timestamp: &Option<String>, empty: bool) {
    let _ = write!(out, "  <{element} id=\"{id}\"{extra}");
    if let Some(t) = timestamp {
        let _ = write!(out, " timestamp=\"{}\"", escape(t));
    }
    out.push_str(if empty { "/>\n" } else { ">\n" });
}

fn write_tags(out: &mut String, tags: &Tags) {
    for (k, v) in tags {
        let _ = writeln!(out, "    <tag k=\"{}\" v=\"{}\"/>", escape(k), escape(v));
    }
}

/// Serializes a document back to OSM XML.
pub fn to_xml(doc: &OsmDocument) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\">\n");
    for (id, n) in &doc.nodes {
        let coords = format!(" lat=\"{}\" lon=\"{}\"", n.lat, n.lon);
        write_open(&mut out, "node", *id, &coords, &n.timestamp, n.tags.is_empty());
        if !n.tags.is_empty() {
            write_tags(&mut out, &n.tags);
            out.push_str("  </node>\n");
        }
    }
    for (id, w) in &doc.ways {
        write_open(&mut out, "way", *id, "", &w.timestamp, false);
        for r in &w.node_refs {
            let _ = writeln!(out, "    <nd ref=\"{r}\"/>");
        }
        write_tags(&mut out, &w.tags);
        out.push_str("  </way>\n");
    }
    for (id, r) in &doc.relations {
        write_open(&mut out, "relation", *id, "", &r.timestamp, false);
        for m in &r.members {
            let _ = writeln!(
                out,
                "    <member type=\"{}\" ref=\"{}\" role=\"{}\"/>",
                m.kind.as_str(),
                m.reference,
                escape(&m.role)
            );
        }
        write_tags(&mut out, &r.tags);
        out.push_str("  </relation>\n");
    }
    out.push_str("</osm>\n");
    out
}

impl OsmDocument {
    pub fn tags(&self, elem: ElementRef) -> Option<&Tags> {
        match elem {
            ElementRef::Node(id) => self.nodes.get(&id).map(|n| &n.tags),
            ElementRef::Way(id) => self.ways.get(&id).map(|w| &w.tags),
            ElementRef::Relation(id) => self.relations.get(&id).map(|r| &r.tags),
        }
    }

    pub fn timestamp(&self, elem: ElementRef) -> Option<&str> {
        match elem {
            ElementRef::Node(id) => self.nodes.get(&id)?.timestamp.as_deref(),
            ElementRef::Way(id) => self.ways.get(&id)?.timestamp.as_deref(),
            ElementRef::Relation(id) => self.relations.get(&id)?.timestamp.as_deref(),
        }
    }

    /// Every element in (nodes, ways, relations) id order.
    pub fn elements(&self) -> impl Iterator<Item = ElementRef> + '_ {
        self.nodes
            .keys()
            .map(|&id| ElementRef::Node(id))
            .chain(self.ways.keys().map(|&id| ElementRef::Way(id)))
            .chain(self.relations.keys().map(|&id| ElementRef::Relation(id)))
    }

    /// `(lon, lat)` of every resolvable coordinate of an element.
    pub fn coordinates(&self, elem: ElementRef) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut visited = HashSet::new();
        self.collect_coordinates(elem, &mut out, &mut visited);
        out
    }

    fn collect_coordinates(&self, elem: ElementRef, out: &mut Vec<(f64, f64)>, visited: &mut HashSet<ElementRef>) {
        if !visited.insert(elem) {
            return;
        }
        match elem {
            ElementRef::Node(id) => {
                if let Some(n) = self.nodes.get(&id) {
                    out.push((n.lon, n.lat));
                }
            }
            ElementRef::Way(id) => {
                if let Some(w) = self.ways.get(&id) {
                    out.extend(w.node_refs.iter().filter_map(|r| self.nodes.get(r)).map(|n| (n.lon, n.lat)));
                }
            }
            ElementRef::Relation(id) => {
                if let Some(r) = self.relations.get(&id) {
                    for m in &r.members {
                        let child = match m.kind {
                            MemberKind::Node => ElementRef::Node(m.reference),
                            MemberKind::Way => ElementRef::Way(m.reference),
                            MemberKind::Relation => ElementRef::Relation(m.reference),
                        };
                        self.collect_coordinates(child, out, visited);
                    }
                }
            }
        }
    }
}

/// Ordered tag-value patterns mapping to man-made categories.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    entries: Vec<(String, SceneCategory)>,
}

const DEFAULT_RULES: &str = include_str!("../rules/osm_rules.txt");

/// Lowercases and reads underscores as spaces, so `parking_space` matches `parking space`.
pub fn normalize_value(v: &str) -> String {
    v.trim().to_lowercase().replace('_', " ")
}

impl RuleTable {
    /// Parses `pattern => Category` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: String| Error::MalformedRule { line: i + 1, reason };
            let (pattern, category) = line
                .split_once("=>")
                .ok_or_else(|| malformed("expected `pattern => Category`".into()))?;
            let pattern = normalize_value(pattern);
            if pattern.is_empty() {
                return Err(malformed("empty pattern".into()));
            }
            let category = SceneCategory::from_name(category.trim()).map_err(|e| malformed(e.to_string()))?;
            if category.kind() != SourceKind::ManMade {
                return Err(malformed(format!("{category} is not a man-made category")));
            }
            entries.push((pattern, category));
        }
        Ok(RuleTable { entries })
    }

    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled rule table parses")
    }

    pub fn builtin_text() -> &'static str {
        DEFAULT_RULES
    }

    pub fn entries(&self) -> &[(String, SceneCategory)] {
        &self.entries
    }
}

/// First rule, in table order, whose pattern equals one of the tag values.
pub fn associate_category(tags: &Tags, rules: &RuleTable) -> Option<SceneCategory> {
    let values: BTreeSet<String> = tags.values().map(|v| normalize_value(v)).collect();
    rules
        .entries
        .iter()
        .find(|(pattern, _)| values.contains(pattern))
        .map(|(_, c)| *c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManMadeParams {
    /// Nominal sample side in pixels.
    pub sample_side: usize,
    /// Half-width of a point feature's window as a fraction of `sample_side`.
    pub point_pad: f64,
    /// Padding added to each side of a way or relation bbox, as a fraction of its extent.
    pub area_pad: f64,
    /// Windows with a side below this are dropped.
    pub min_side: usize,
    /// Inclusive `[from, to]` range of ISO-8601 timestamps; elements outside it are ignored.
    pub time_window: Option<(String, String)>,
}

impl Default for ManMadeParams {
    fn default() -> Self {
        ManMadeParams {
            sample_side: 64,
            point_pad: 0.5,
            area_pad: 0.1,
            min_side: 32,
            time_window: None,
        }
    }
}

// Geo round trips leave pixel coordinates a few ulps off integers.
const SNAP: f64 = 1e-9;

fn snap_floor(v: f64) -> f64 {
    (v + SNAP).floor()
}

fn snap_ceil(v: f64) -> f64 {
    (v - SNAP).ceil()
}

/// Pixel window of an element's coordinates inside `image`.
pub fn element_window(
    coords: &[(f64, f64)],
    is_point: bool,
    image: &GeoRaster,
    params: &ManMadeParams,
) -> Result<Option<Rect>> {
    if coords.is_empty() {
        return Ok(None);
    }
    let mut pixels = Vec::with_capacity(coords.len());
    for &(x, y) in coords {
        pixels.push(image.transform.invert(x, y)?);
    }
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (x0, y0, x1, y1) = if is_point {
        let (c, r) = pixels[0];
        if c < 0.0 || r < 0.0 || c >= w || r >= h {
            return Ok(None);
        }
        let half = (params.point_pad * params.sample_side as f64).round();
        let (c, r) = (snap_floor(c), snap_floor(r));
        (c - half, r - half, c + half, r + half)
    } else {
        let (mut x0, mut y0, mut x1, mut y1) = pixels.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        );
        let (px, py) = (params.area_pad * (x1 - x0), params.area_pad * (y1 - y0));
        x0 -= px;
        x1 += px;
        y0 -= py;
        y1 += py;
        (snap_floor(x0), snap_floor(y0), snap_ceil(x1), snap_ceil(y1))
    };
    let (x0, y0) = (x0.max(0.0), y0.max(0.0));
    let (x1, y1) = (x1.min(w), y1.min(h));
    if x1 <= x0 || y1 <= y0 {
        return Ok(None);
    }
    let rect = Rect::new(x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize);
    Ok((rect.min_side() >= params.min_side.max(1)).then_some(rect))
}

/// Man-made samples for every categorised element that lands inside `image`.
/// Identical (window, label) pairs are emitted once.
pub fn sample_manmade(
    image_id: &str,
    image: &GeoRaster,
    doc: &OsmDocument,
    rules: &RuleTable,
    params: &ManMadeParams,
) -> Result<Vec<Sample>> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for elem in doc.elements() {
        let Some(label) = doc.tags(elem).and_then(|t| associate_category(t, rules)) else {
            continue;
        };
        if let Some((from, to)) = &params.time_window {
            match doc.timestamp(elem) {
                Some(t) if t >= from.as_str() && t <= to.as_str() => {}
                _ => continue,
            }
        }
        let coords = doc.coordinates(elem);
        let is_point = matches!(elem, ElementRef::Node(_));
        let Some(window) = element_window(&coords, is_point, image, params)? else {
            continue;
        };
        if seen.insert((window, label)) {
            samples.push(Sample {
                image_id: image_id.to_string(),
                window,
                label,
                score: None,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_raster::GeoTransform;

    fn tags(pairs: &[(&str, &str)]) -> Tags {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn image128() -> GeoRaster {
        // 0.001 degree pixels with the upper-left corner at (10, 50).
        GeoRaster::new(128, 128, 3, vec![0; 128 * 128 * 3], GeoTransform::north_up(10.0, 50.0, 0.001, -0.001))
            .unwrap()
    }

    #[test]
    fn single_tagged_node() {
        let doc = parse_osm(
            r#"<osm version="0.6"><node id="1" lat="1.5" lon="2.5"><tag k="amenity" v="school"/></node></osm>"#,
        )
        .unwrap();
        assert_eq!(doc.nodes.len(), 1);
        assert_eq!(doc.nodes[&1].tags, tags(&[("amenity", "school")]));
        assert_eq!((doc.nodes[&1].lon, doc.nodes[&1].lat), (2.5, 1.5));
    }

    #[test]
    fn empty_document() {
        let doc = parse_osm("<osm/>").unwrap();
        assert_eq!(doc, OsmDocument::default());
    }

    #[test]
    fn square_way_resolves() {
        let doc = parse_osm(
            r#"<osm>
              <node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="1"/>
              <node id="3" lat="1" lon="1"/><node id="4" lat="1" lon="0"/>
              <way id="10"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><tag k="amenity" v="parking"/></way>
            </osm>"#,
        )
        .unwrap();
        assert_eq!(
            doc.coordinates(ElementRef::Way(10)),
            vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        );
    }

    #[test]
    fn unresolved_ways_are_skipped_and_counted() {
        let doc = parse_osm(r#"<osm><node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/><nd ref="9"/></way></osm>"#)
            .unwrap();
        assert!(doc.ways.is_empty());
        assert_eq!(doc.skipped_ways, 1);
    }

    #[test]
    fn malformed_and_unsupported_documents() {
        assert!(matches!(parse_osm("<osm><node id=\"1\" lat=\"0\" lon=\"0\">"), Err(Error::MalformedXml { .. })));
        assert!(matches!(parse_osm("<osm><way id=\"1\"></node></osm>"), Err(Error::MalformedXml { .. })));
        assert!(matches!(parse_osm("<osm><node id=\"x\" lat=\"0\" lon=\"0\"/></osm>"), Err(Error::MalformedXml { .. })));
        assert!(matches!(parse_osm("<osm version=\"0.5\"/>"), Err(Error::UnsupportedVersion(_))));
        assert!(matches!(
            parse_osm("<osm><node id=\"1\" lat=\"0\" lon=\"0\"/><node id=\"1\" lat=\"0\" lon=\"0\"/></osm>"),
            Err(Error::MalformedXml { .. })
        ));
    }

    #[test]
    fn relation_members_and_timestamps() {
        let doc = parse_osm(
            r#"<osm>
              <node id="1" lat="0" lon="0" timestamp="2020-05-01T00:00:00Z"/>
              <node id="2" lat="2" lon="3" timestamp="2019-01-01T00:00:00Z"/>
              <relation id="7"><member type="node" ref="1" role="a"/><member type="node" ref="2" role=""/>
                <member type="relation" ref="7" role="self"/><tag k="landuse" v="industrial"/></relation>
            </osm>"#,
        )
        .unwrap();
        assert_eq!(doc.coordinates(ElementRef::Relation(7)), vec![(0.0, 0.0), (3.0, 2.0)]);
        assert_eq!(
            doc.timestamp_range,
            Some(("2019-01-01T00:00:00Z".to_string(), "2020-05-01T00:00:00Z".to_string()))
        );
    }

    #[test]
    fn serialize_round_trip() {
        let text = r#"<osm version="0.6">
          <node id="1" lat="0.5" lon="0.25" timestamp="2021-01-01T00:00:00Z"><tag k="name" v="A &amp; B"/></node>
          <node id="2" lat="1" lon="1"/>
          <way id="3"><nd ref="1"/><nd ref="2"/><tag k="highway" v="service"/></way>
          <relation id="4"><member type="way" ref="3" role="outer"/><tag k="type" v="multipolygon"/></relation>
        </osm>"#;
        let doc = parse_osm(text).unwrap();
        assert_eq!(parse_osm(&to_xml(&doc)).unwrap(), doc);
    }

    #[test]
    fn published_rules() {
        let rules = RuleTable::builtin();
        let name = |pairs: &[(&str, &str)]| associate_category(&tags(pairs), &rules).map(|c| c.name());
        assert_eq!(name(&[("aeroway", "aerodrome")]), Some("Airport"));
        assert_eq!(name(&[("amenity", "university")]), Some("School"));
        assert_eq!(name(&[("shop", "phone")]), None);
        assert_eq!(name(&[("amenity", "Parking_Space")]), Some("Parking"));
    }

    #[test]
    fn association_ignores_tag_order() {
        let rules = RuleTable::parse("school => School\nparking => Parking\n").unwrap();
        let a = tags(&[("a", "parking"), ("b", "school")]);
        let b = tags(&[("a", "school"), ("b", "parking")]);
        assert_eq!(associate_category(&a, &rules), associate_category(&b, &rules));
        assert_eq!(associate_category(&a, &rules).unwrap().name(), "School");
    }

    #[test]
    fn rule_table_validation() {
        assert!(matches!(RuleTable::parse("forest => Forest"), Err(Error::MalformedRule { line: 1, .. })));
        assert!(matches!(RuleTable::parse("# c\nno arrow here"), Err(Error::MalformedRule { line: 2, .. })));
        assert!(matches!(RuleTable::parse("x => Moonbase"), Err(Error::MalformedRule { .. })));
    }

    #[test]
    fn point_window_centered() {
        let img = image128();
        let (x, y) = img.transform.apply(64.0, 64.0);
        let w = element_window(&[(x, y)], true, &img, &ManMadeParams::default()).unwrap();
        assert_eq!(w, Some(Rect::new(32, 32, 64, 64)));
    }

    #[test]
    fn covering_way_clamps_to_image() {
        let img = image128();
        let coords = [img.transform.apply(-5.0, -5.0), img.transform.apply(140.0, 140.0)];
        let w = element_window(&coords, false, &img, &ManMadeParams::default()).unwrap();
        assert_eq!(w, Some(Rect::full(128, 128)));
    }

    #[test]
    fn outside_node_has_no_window() {
        let img = image128();
        let w = element_window(&[img.transform.apply(-10.0, 5.0)], true, &img, &ManMadeParams::default()).unwrap();
        assert_eq!(w, None);
    }

    fn fixture_doc(img: &GeoRaster) -> String {
        let p = |c: f64, r: f64| img.transform.apply(c, r);
        let mut nodes = String::new();
        let corners = [(10.0, 10.0), (60.0, 10.0), (60.0, 50.0), (10.0, 50.0), (70.0, 70.0), (120.0, 70.0), (120.0, 120.0), (70.0, 120.0), (40.0, 90.0)];
        for (i, (c, r)) in corners.iter().enumerate() {
            let (lon, lat) = p(*c, *r);
            nodes += &format!("<node id=\"{}\" lat=\"{lat}\" lon=\"{lon}\"/>", i + 1);
        }
        let (lon, lat) = p(64.0, 64.0);
        format!(
            r#"<osm>{nodes}
              <node id="20" lat="{lat}" lon="{lon}"><tag k="amenity" v="school"/></node>
              <node id="21" lat="{lat}" lon="{lon}"><tag k="amenity" v="school"/></node>
              <way id="30"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/><tag k="amenity" v="parking"/></way>
              <way id="31"><nd ref="5"/><nd ref="6"/><nd ref="7"/><nd ref="8"/><nd ref="5"/><tag k="amenity" v="parking"/></way>
              <way id="32"><nd ref="4"/><nd ref="9"/><nd ref="8"/><tag k="shop" v="phone"/></way>
            </osm>"#
        )
    }

    #[test]
    fn parking_ways_and_deduplicated_schools() {
        let img = image128();
        let doc = parse_osm(&fixture_doc(&img)).unwrap();
        let samples = sample_manmade("img", &img, &doc, &RuleTable::builtin(), &ManMadeParams::default()).unwrap();
        let labels: Vec<&str> = samples.iter().map(|s| s.label.name()).collect();
        assert_eq!(labels, vec!["School", "Parking", "Parking"]);
        // 50x40 bbox padded by 5 and 4 pixels per side.
        assert_eq!(samples[1].window, Rect::new(5, 6, 60, 48));
        for s in &samples {
            assert!(s.window.fits_within(128, 128));
            assert!(s.window.min_side() >= 32);
        }
    }

    #[test]
    fn empty_document_yields_nothing() {
        let img = image128();
        let doc = parse_osm("<osm/>").unwrap();
        assert!(sample_manmade("i", &img, &doc, &RuleTable::builtin(), &ManMadeParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn time_window_filters_elements() {
        let img = image128();
        let (lon, lat) = img.transform.apply(64.0, 64.0);
        let doc = parse_osm(&format!(
            r#"<osm><node id="1" lat="{lat}" lon="{lon}" timestamp="2018-01-01T00:00:00Z"><tag k="amenity" v="school"/></node></osm>"#
        ))
        .unwrap();
        let params = ManMadeParams {
            time_window: Some(("2019-01-01".into(), "2021-12-31".into())),
            ..Default::default()
        };
        assert!(sample_manmade("i", &img, &doc, &RuleTable::builtin(), &params).unwrap().is_empty());
    }
}
