"""Rule-based cleaning of disease-surveillance line-lists"""
