"""Gate Energetics - motor de simulación y análisis"""
