//! Desk-scale end-to-end system (dataset, model, losses, training, CLI glue).
