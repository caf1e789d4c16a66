use serde_json::{json, Value};

/// JSON schema of the canonical annotation document.
pub fn annotation_schema() -> Value {
    let id = json!({"type": "string", "minLength": 1});
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "annotation set",
        "type": "object",
        "additionalProperties": false,
        "required": ["images", "annotators", "labels", "boxes"],
        "properties": {
            "images": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["id", "width", "height"],
                    "properties": {
                        "id": id,
                        "width": {"type": "integer", "minimum": 1},
                        "height": {"type": "integer", "minimum": 1},
                        "source": {"type": "string"}
                    }
                }
            },
            "annotators": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["id", "tier"],
                    "properties": {
                        "id": id,
                        "tier": {"enum": ["professional", "expert", "experienced", "novice", "model"]}
                    }
                }
            },
            "labels": {"type": "array", "items": id, "uniqueItems": true},
            "boxes": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["image_id", "annotator_id", "label", "bbox"],
                    "properties": {
                        "image_id": id,
                        "annotator_id": id,
                        "label": id,
                        "bbox": {
                            "description": "[x, y, w, h] in pixels; covers columns x..x+w and rows y..y+h (end exclusive)",
                            "type": "array",
                            "items": {"type": "integer"},
                            "minItems": 4,
                            "maxItems": 4
                        },
                        "score": {"type": "number", "minimum": 0, "maximum": 1}
                    }
                }
            },
            "assignments": {
                "description": "images an annotator reviewed; an assigned image with no boxes counts as labeled empty",
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["image_id", "annotator_id"],
                    "properties": {"image_id": id, "annotator_id": id}
                }
            }
        }
    })
}
