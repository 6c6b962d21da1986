//! Function table: cognitive UDFs under their SQL names, plus the
//! built-in aggregates and `contains`.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Udf {
    StringPresent,
    ProximityAvg,
    CombinedAvgSim,
    AttributeSimAvg,
    /// `analogyQuery(a, b, c, d, flag)`.
    AnalogyQuery,
    /// `analogyUDF(a, b, c, d)`: analogyQuery with 3COSMUL.
    AnalogyCosMul,
    AnalogySequence,
    ProximityAvgForExtKb,
    ProximityAvgAdvForExtKb,
    /// `semclusterUDF(in1, ..., inN, candidate)`.
    SemCluster,
    CosineDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Max,
    Min,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Udf(Udf),
    Aggregate(Aggregate),
    Contains,
}

#[derive(Debug, Clone, Copy)]
pub struct FunctionSpec {
    pub name: &'static str,
    pub function: Function,
    pub min_args: usize,
    pub max_args: usize,
}

const fn spec(
    name: &'static str,
    function: Function,
    min_args: usize,
    max_args: usize,
) -> FunctionSpec {
    FunctionSpec {
        name,
        function,
        min_args,
        max_args,
    }
}

pub const FUNCTIONS: &[FunctionSpec] = &[
    spec("stringPresent", Function::Udf(Udf::StringPresent), 2, 2),
    spec("proximityAvg", Function::Udf(Udf::ProximityAvg), 2, 2),
    spec("similarityUDF", Function::Udf(Udf::ProximityAvg), 2, 2),
    spec("valueSimUDF", Function::Udf(Udf::ProximityAvg), 2, 2),
    spec("combinedAvgSim", Function::Udf(Udf::CombinedAvgSim), 4, 4),
    spec("attributeSimAvg", Function::Udf(Udf::AttributeSimAvg), 5, 5),
    spec("analogyQuery", Function::Udf(Udf::AnalogyQuery), 5, 5),
    spec("analogyUDF", Function::Udf(Udf::AnalogyCosMul), 4, 4),
    spec(
        "analogyQueryOfImageSequenceUsingAttributeVector",
        Function::Udf(Udf::AnalogySequence),
        7,
        7,
    ),
    spec("analogySequence", Function::Udf(Udf::AnalogySequence), 7, 7),
    spec(
        "proximityAvgForExtKB",
        Function::Udf(Udf::ProximityAvgForExtKb),
        2,
        2,
    ),
    spec(
        "proximityAvgAdvForExtKB",
        Function::Udf(Udf::ProximityAvgAdvForExtKb),
        2,
        2,
    ),
    spec(
        "semclusterUDF",
        Function::Udf(Udf::SemCluster),
        2,
        usize::MAX,
    ),
    spec("cosineDistance", Function::Udf(Udf::CosineDistance), 2, 2),
    spec("MAX", Function::Aggregate(Aggregate::Max), 1, 1),
    spec("MIN", Function::Aggregate(Aggregate::Min), 1, 1),
    spec("AVG", Function::Aggregate(Aggregate::Avg), 1, 1),
    spec("contains", Function::Contains, 2, 2),
];

/// Case-insensitive lookup.
pub fn lookup(name: &str) -> Option<&'static FunctionSpec> {
    FUNCTIONS.iter().find(|f| f.name.eq_ignore_ascii_case(name))
}
